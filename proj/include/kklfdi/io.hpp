#pragma once

#include "kklfdi/core.hpp"
#include "kklfdi/mlp.hpp"
#include "kklfdi/observer.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

// Binary containers share one layout:
//   8-byte magic | uint64 little-endian header length | JSON header | payload
// The payload is a flat run of little-endian IEEE-754 doubles whose order is
// spelled out in the header.

namespace kklfdi::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr char kModelMagic[8] = {'K', 'K', 'L', 'M', 'O', 'D', 'L', '1'};
inline constexpr char kDatasetMagic[8] = {'K', 'K', 'L', 'D', 'A', 'T', 'A', '1'};
inline constexpr int kFormatVersion = 1;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError("write failed for " + p.string());
}

inline std::string file_fingerprint(const fs::path& p) { return hex64(fnv1a(read_file(p))); }

/// Deterministic JSON text (sorted keys, 2-space indent, trailing newline).
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

class Writer {
 public:
  void put(double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    buf_.append(b, 8);
  }
  void put_row_major(const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) put(m(i, j));
  }
  void put(const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) put(v[i]);
  }
  std::string finish(const char (&magic)[8], const json& header) const {
    const std::string h = header.dump();
    std::string out(magic, 8);
    const auto len = static_cast<std::uint64_t>(h.size());
    char b[8];
    std::memcpy(b, &len, 8);
    out.append(b, 8);
    out += h;
    out += buf_;
    return out;
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, const char (&magic)[8], const std::string& what)
      : bytes_(std::move(bytes)) {
    if (bytes_.size() < 16 || std::memcmp(bytes_.data(), magic, 8) != 0)
      throw ArtifactError(what + ": bad magic, not a recognised file");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes_.data() + 8, 8);
    if (16 + len > bytes_.size()) throw ArtifactError(what + ": truncated header");
    try {
      header_ = json::parse(bytes_.substr(16, len));
    } catch (const json::exception&) {
      throw ArtifactError(what + ": unreadable header");
    }
    pos_ = 16 + len;
    what_ = what;
  }
  const json& header() const { return header_; }
  double get() {
    if (pos_ + 8 > bytes_.size()) throw ArtifactError(what_ + ": truncated payload");
    double v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  Mat get_row_major(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = get();
    return m;
  }
  Vec get_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = get();
    return v;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw ArtifactError(what_ + ": trailing bytes after payload");
  }

 private:
  std::string bytes_;
  json header_;
  std::size_t pos_ = 0;
  std::string what_;
};

// ---------------------------------------------------------------- datasets

/// Rows (trajectory id, k, t_k, x_1..x_nx, z_1..z_nz), row-major.
inline std::string encode_dataset(const Dataset& ds) {
  json h;
  h["format_version"] = kFormatVersion;
  h["n_x"] = ds.n_x;
  h["n_z"] = ds.n_z;
  h["t0"] = ds.t0;
  h["delta"] = ds.delta;
  h["n_trajectories"] = ds.trajectories.size();
  h["samples_per_trajectory"] = ds.samples_per_trajectory();
  json cols = json::array({"trajectory", "k", "t"});
  for (std::size_t i = 1; i <= ds.n_x; ++i) cols.push_back("x" + std::to_string(i));
  for (std::size_t i = 1; i <= ds.n_z; ++i) cols.push_back("z" + std::to_string(i));
  h["columns"] = cols;
  Writer w;
  for (const auto& tr : ds.trajectories) {
    require(tr.x.cols() == static_cast<Eigen::Index>(ds.samples_per_trajectory()),
            "encode_dataset: ragged trajectories");
    for (Eigen::Index k = 0; k < tr.x.cols(); ++k) {
      w.put(static_cast<double>(tr.id));
      w.put(static_cast<double>(k));
      w.put(ds.t0 + static_cast<double>(k) * ds.delta);
      w.put(Vec(tr.x.col(k)));
      w.put(Vec(tr.z.col(k)));
    }
  }
  return w.finish(kDatasetMagic, h);
}

inline Dataset decode_dataset(std::string bytes) {
  Reader r(std::move(bytes), kDatasetMagic, "dataset");
  const auto& h = r.header();
  if (h.at("format_version").get<int>() != kFormatVersion)
    throw ArtifactError("dataset: unsupported format version");
  Dataset ds;
  ds.n_x = h.at("n_x").get<std::size_t>();
  ds.n_z = h.at("n_z").get<std::size_t>();
  ds.t0 = h.at("t0").get<double>();
  ds.delta = h.at("delta").get<double>();
  const auto n_traj = h.at("n_trajectories").get<std::size_t>();
  const auto n_samp = static_cast<Eigen::Index>(h.at("samples_per_trajectory").get<std::size_t>());
  const auto nx = static_cast<Eigen::Index>(ds.n_x);
  const auto nz = static_cast<Eigen::Index>(ds.n_z);
  for (std::size_t j = 0; j < n_traj; ++j) {
    TrajectoryPairs tp;
    tp.x.resize(nx, n_samp);
    tp.z.resize(nz, n_samp);
    for (Eigen::Index k = 0; k < n_samp; ++k) {
      tp.id = static_cast<std::size_t>(r.get());
      r.get();  // k
      r.get();  // t_k
      tp.x.col(k) = r.get_vec(nx);
      tp.z.col(k) = r.get_vec(nz);
    }
    ds.trajectories.push_back(std::move(tp));
  }
  r.expect_end();
  return ds;
}

inline void save_dataset(const fs::path& p, const Dataset& ds) { write_file(p, encode_dataset(ds)); }
inline Dataset load_dataset(const fs::path& p) { return decode_dataset(read_file(p)); }

// ------------------------------------------------------------------ models

/// Trained observer: linear part plus the learned maps.
struct Model {
  ObserverMatrices observer;
  Mlp decoder;
  std::optional<Mlp> encoder;
  std::string train_fingerprint;
  json train_config = json::object();
};

namespace detail {

inline json net_header(const Mlp& net) { return {{"sizes", net.sizes()}}; }

inline void put_net(Writer& w, const Mlp& net) {
  for (const auto& l : net.layers()) {
    w.put_row_major(l.weight);
    w.put(l.bias);
  }
  w.put(net.input_norm().mean);
  w.put(net.input_norm().scale);
  w.put(net.output_norm().mean);
  w.put(net.output_norm().scale);
}

inline Mlp get_net(Reader& r, const json& h) {
  const auto sizes = h.at("sizes").get<std::vector<std::size_t>>();
  Mlp net(sizes, 0);
  for (auto& l : net.layers()) {
    l.weight = r.get_row_major(l.weight.rows(), l.weight.cols());
    l.bias = r.get_vec(l.bias.size());
  }
  const auto in = static_cast<Eigen::Index>(sizes.front());
  const auto out = static_cast<Eigen::Index>(sizes.back());
  net.input_norm().mean = r.get_vec(in);
  net.input_norm().scale = r.get_vec(in);
  net.output_norm().mean = r.get_vec(out);
  net.output_norm().scale = r.get_vec(out);
  return net;
}

}  // namespace detail

/// Payload order: A (n_z x n_z), B (n_z x n_y), lambda (if present), then
/// decoder and encoder. Each network: for every layer W (out x in) then b,
/// followed by input mean, input scale, output mean, output scale. All
/// matrices row-major.
inline std::string encode_model(const Model& m) {
  json h;
  h["format_version"] = kFormatVersion;
  h["kind"] = "kkl-observer";
  const auto& o = m.observer;
  h["observer"] = {{"n_x", o.n_x},           {"n_y", o.n_y},
                   {"n_z", o.n_z},           {"c", o.c},
                   {"kappa_V", o.kappa_V},   {"eig_range", {o.eig_range.lo, o.eig_range.hi}},
                   {"controllable", o.controllable}, {"lambda_size", o.lambda.size()}};
  h["decoder"] = detail::net_header(m.decoder);
  h["encoder"] = m.encoder ? detail::net_header(*m.encoder) : json(nullptr);
  h["train_fingerprint"] = m.train_fingerprint;
  h["train_config"] = m.train_config;
  Writer w;
  w.put_row_major(o.A);
  w.put_row_major(o.B);
  w.put(o.lambda);
  detail::put_net(w, m.decoder);
  if (m.encoder) detail::put_net(w, *m.encoder);
  return w.finish(kModelMagic, h);
}

inline Model decode_model(std::string bytes) {
  Reader r(std::move(bytes), kModelMagic, "model");
  const auto& h = r.header();
  if (h.at("format_version").get<int>() != kFormatVersion)
    throw ArtifactError("model: unsupported format version");
  Model m;
  const auto& oh = h.at("observer");
  auto& o = m.observer;
  o.n_x = oh.at("n_x").get<std::size_t>();
  o.n_y = oh.at("n_y").get<std::size_t>();
  o.n_z = oh.at("n_z").get<std::size_t>();
  o.c = oh.at("c").get<double>();
  o.kappa_V = oh.at("kappa_V").get<double>();
  o.eig_range = {oh.at("eig_range")[0].get<double>(), oh.at("eig_range")[1].get<double>()};
  o.controllable = oh.at("controllable").get<bool>();
  const auto nz = static_cast<Eigen::Index>(o.n_z);
  o.A = r.get_row_major(nz, nz);
  o.B = r.get_row_major(nz, static_cast<Eigen::Index>(o.n_y));
  o.lambda = r.get_vec(oh.at("lambda_size").get<Eigen::Index>());
  m.decoder = detail::get_net(r, h.at("decoder"));
  if (!h.at("encoder").is_null()) m.encoder = detail::get_net(r, h.at("encoder"));
  m.train_fingerprint = h.at("train_fingerprint").get<std::string>();
  m.train_config = h.at("train_config");
  r.expect_end();
  if (m.decoder.input_dim() != o.n_z || m.decoder.output_dim() != o.n_x)
    throw ArtifactError("model: decoder dimensions do not match the observer");
  return m;
}

inline void save_model(const fs::path& p, const Model& m) { write_file(p, encode_model(m)); }
inline Model load_model(const fs::path& p) { return decode_model(read_file(p)); }

// -------------------------------------------------------------------- json

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace kklfdi::io
