#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgpfm/baselines.hpp"
#include "dgpfm/data.hpp"
#include "dgpfm/model.hpp"
#include "dgpfm/quadrature.hpp"

// Versioned checkpoint container: a fixed magic, a JSON header describing the
// model, grid, parameter manifest, and normalization, then the raw parameter
// doubles in manifest order. Round trips are bit-identical.

namespace dgpfm {

inline constexpr char kCheckpointMagic[4] = {'D', 'G', 'P', 'C'};
inline constexpr uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind = "dgpfm";  // "dgpfm" or "flr"
  // dgpfm payload
  ModelSpec model;
  std::vector<Rule1D> grid_rules;
  // shared
  ParamStore params;
  std::optional<Normalization> normalization;
  // flr payload (mirrored into params as omega / intercept / residual_var)
  FlrModel flr;
};

namespace ckpt_detail {

using nlohmann::json;

inline const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::SquaredExponential: return "se";
    case KernelFamily::Matern52: return "matern52";
    case KernelFamily::Matern132: return "matern132";
  }
  throw std::invalid_argument("unknown kernel family");
}
inline KernelFamily family_from(const std::string& s) {
  if (s == "se") return KernelFamily::SquaredExponential;
  if (s == "matern52") return KernelFamily::Matern52;
  if (s == "matern132") return KernelFamily::Matern132;
  throw format_error("unknown kernel family '" + s + "'", 0);
}

inline json kernel_to_json(const KernelSpec& k) {
  json j;
  j["families"] = json::array();
  for (KernelFamily f : k.members) j["families"].push_back(family_name(f));
  j["weighted"] = k.weighted;
  j["dim"] = k.dim;
  return j;
}
inline KernelSpec kernel_from_json(const json& j) {
  KernelSpec k;
  k.members.clear();  // the default spec is not empty
  for (const auto& f : j.at("families")) k.members.push_back(family_from(f.get<std::string>()));
  k.weighted = j.at("weighted").get<bool>();
  k.dim = j.at("dim").get<int>();
  return k;
}

inline const char* transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::Quadrature: return "quadrature";
    case TransformKind::Fourier: return "fourier";
    case TransformKind::Dense: return "dense";
  }
  throw std::invalid_argument("unknown transform kind");
}
inline TransformKind transform_from(const std::string& s) {
  if (s == "quadrature") return TransformKind::Quadrature;
  if (s == "fourier") return TransformKind::Fourier;
  if (s == "dense") return TransformKind::Dense;
  throw format_error("unknown transform kind '" + s + "'", 0);
}

inline const char* rule_name(RuleKind k) {
  return k == RuleKind::GaussLegendre ? "gauss_legendre" : "trapezoid";
}
inline RuleKind rule_from(const std::string& s) {
  if (s == "gauss_legendre") return RuleKind::GaussLegendre;
  if (s == "trapezoid") return RuleKind::Trapezoid;
  throw format_error("unknown rule kind '" + s + "'", 0);
}

inline json model_to_json(const ModelSpec& m) {
  json j;
  j["d"] = m.d;
  j["d0"] = m.d0;
  j["d1"] = m.d1;
  j["channels"] = m.channels;
  j["weight_penalty"] = m.weight_penalty;
  j["mean_field"] = m.mean_field;
  j["input_kernel"] = kernel_to_json(m.input_kernel);
  j["interp_kernel"] = kernel_to_json(m.interp_kernel);
  j["layers"] = json::array();
  for (const LayerDesc& l : m.layers) {
    json jl;
    jl["linear"] = l.is_linear;
    if (l.is_linear) {
      jl["kind"] = transform_name(l.kind);
      if (l.kind == TransformKind::Fourier) jl["modes"] = l.modes;
    } else {
      jl["inducing"] = l.inducing;
      jl["activation"] = kernel_to_json(l.activation);
    }
    j["layers"].push_back(jl);
  }
  return j;
}
inline ModelSpec model_from_json(const json& j) {
  ModelSpec m;
  m.d = j.at("d").get<int>();
  m.d0 = j.at("d0").get<int>();
  m.d1 = j.at("d1").get<int>();
  m.channels = j.at("channels").get<int>();
  m.weight_penalty = j.at("weight_penalty").get<double>();
  m.mean_field = j.at("mean_field").get<bool>();
  m.input_kernel = kernel_from_json(j.at("input_kernel"));
  m.interp_kernel = kernel_from_json(j.at("interp_kernel"));
  for (const auto& jl : j.at("layers")) {
    LayerDesc l;
    l.is_linear = jl.at("linear").get<bool>();
    if (l.is_linear) {
      l.kind = transform_from(jl.at("kind").get<std::string>());
      if (l.kind == TransformKind::Fourier) l.modes = jl.at("modes").get<std::vector<int>>();
    } else {
      l.inducing = jl.at("inducing").get<int>();
      l.activation = kernel_from_json(jl.at("activation"));
    }
    m.layers.push_back(l);
  }
  m.validate();
  return m;
}

inline json basis_to_json(const FourierBasis& b) {
  json j;
  j["counts"] = b.counts;
  json box = json::array();
  for (Eigen::Index r = 0; r < b.box.rows(); ++r)
    box.push_back(json::array({b.box(r, 0), b.box(r, 1)}));
  j["box"] = box;
  return j;
}
inline FourierBasis basis_from_json(const json& j) {
  FourierBasis b;
  b.counts = j.at("counts").get<std::vector<int>>();
  const auto& box = j.at("box");
  b.box = Mat(static_cast<Eigen::Index>(box.size()), 2);
  for (std::size_t r = 0; r < box.size(); ++r) {
    b.box(static_cast<Eigen::Index>(r), 0) = box[r].at(0).get<double>();
    b.box(static_cast<Eigen::Index>(r), 1) = box[r].at(1).get<double>();
  }
  b.validate();
  return b;
}

inline json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}
inline Vec vec_from_json(const json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  using nlohmann::json;
  if (c.kind != "dgpfm" && c.kind != "flr")
    throw std::invalid_argument("checkpoint: kind must be 'dgpfm' or 'flr'");
  json header;
  header["kind"] = c.kind;
  if (c.kind == "dgpfm") {
    header["model"] = ckpt_detail::model_to_json(c.model);
    json rules = json::array();
    for (const Rule1D& r : c.grid_rules) {
      json jr;
      jr["kind"] = ckpt_detail::rule_name(r.kind);
      jr["n"] = static_cast<int>(r.nodes.size());
      jr["a"] = r.a;
      jr["b"] = r.b;
      rules.push_back(jr);
    }
    header["grid"] = rules;
  } else {
    json f;
    f["in_basis"] = ckpt_detail::basis_to_json(c.flr.in_basis);
    f["out_basis"] = ckpt_detail::basis_to_json(c.flr.out_basis);
    f["d0"] = c.flr.d0;
    f["d1"] = c.flr.d1;
    f["ridge"] = c.flr.ridge;
    f["proj_ridge"] = c.flr.proj_ridge;
    f["freq_weighted"] = c.flr.freq_weighted;
    header["flr"] = f;
  }
  json manifest = json::array();
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    json jm;
    jm["name"] = c.params.names[i];
    jm["rows"] = static_cast<long>(c.params.values[i].rows());
    jm["cols"] = static_cast<long>(c.params.values[i].cols());
    manifest.push_back(jm);
  }
  header["params"] = manifest;
  if (c.normalization) {
    const Normalization& nz = *c.normalization;
    json jn;
    json box = json::array();
    for (Eigen::Index r = 0; r < nz.box.rows(); ++r)
      box.push_back(json::array({nz.box(r, 0), nz.box(r, 1)}));
    jn["box"] = box;
    jn["in_mean"] = ckpt_detail::vec_to_json(nz.in_mean);
    jn["in_sd"] = ckpt_detail::vec_to_json(nz.in_sd);
    jn["out_mean"] = ckpt_detail::vec_to_json(nz.out_mean);
    jn["out_sd"] = ckpt_detail::vec_to_json(nz.out_sd);
    header["normalization"] = jn;
  } else {
    header["normalization"] = nullptr;
  }

  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kCheckpointMagic, 4);
  const uint16_t ver = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Mat& m : c.params.values)
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  using nlohmann::json;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  uint64_t offset = 0;
  auto read_exact = [&](char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw format_error("unexpected end of file in " + path, offset);
    offset += n;
  };
  char magic[4];
  read_exact(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw format_error("bad magic in " + path, 0);
  uint16_t ver = 0;
  read_exact(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (ver != kCheckpointVersion)
    throw format_error("unsupported checkpoint version " + std::to_string(ver) + " in " + path, 4);
  uint64_t hlen = 0;
  read_exact(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (hlen > (1u << 24)) throw format_error("implausible header length in " + path, 6);
  std::string hs(static_cast<std::size_t>(hlen), '\0');
  const uint64_t header_at = offset;
  read_exact(hs.data(), hs.size());
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw format_error(std::string("bad checkpoint header: ") + e.what(), header_at);
  }

  Checkpoint c;
  try {
    c.kind = header.at("kind").get<std::string>();
    if (c.kind == "dgpfm") {
      c.model = ckpt_detail::model_from_json(header.at("model"));
      for (const auto& jr : header.at("grid"))
        c.grid_rules.push_back(make_rule(ckpt_detail::rule_from(jr.at("kind").get<std::string>()),
                                         jr.at("n").get<int>(), jr.at("a").get<double>(),
                                         jr.at("b").get<double>()));
    } else if (c.kind == "flr") {
      const json& f = header.at("flr");
      c.flr.in_basis = ckpt_detail::basis_from_json(f.at("in_basis"));
      c.flr.out_basis = ckpt_detail::basis_from_json(f.at("out_basis"));
      c.flr.d0 = f.at("d0").get<int>();
      c.flr.d1 = f.at("d1").get<int>();
      c.flr.ridge = f.at("ridge").get<double>();
      c.flr.proj_ridge = f.at("proj_ridge").get<double>();
      c.flr.freq_weighted = f.at("freq_weighted").get<bool>();
    } else {
      throw format_error("unknown checkpoint kind '" + c.kind + "' in " + path, header_at);
    }
    if (!header.at("normalization").is_null()) {
      const json& jn = header.at("normalization");
      Normalization nz;
      const auto& box = jn.at("box");
      nz.box = Mat(static_cast<Eigen::Index>(box.size()), 2);
      for (std::size_t r = 0; r < box.size(); ++r) {
        nz.box(static_cast<Eigen::Index>(r), 0) = box[r].at(0).get<double>();
        nz.box(static_cast<Eigen::Index>(r), 1) = box[r].at(1).get<double>();
      }
      nz.in_mean = ckpt_detail::vec_from_json(jn.at("in_mean"));
      nz.in_sd = ckpt_detail::vec_from_json(jn.at("in_sd"));
      nz.out_mean = ckpt_detail::vec_from_json(jn.at("out_mean"));
      nz.out_sd = ckpt_detail::vec_from_json(jn.at("out_sd"));
      c.normalization = std::move(nz);
    }
    for (const auto& jm : header.at("params")) {
      const std::string name = jm.at("name").get<std::string>();
      const long rows = jm.at("rows").get<long>(), cols = jm.at("cols").get<long>();
      if (rows < 0 || cols < 0 || rows * cols > (1l << 28))
        throw format_error("implausible parameter shape in " + path, header_at);
      c.params.add(name, Mat(rows, cols));
    }
  } catch (const json::exception& e) {
    throw format_error(std::string("bad checkpoint header: ") + e.what(), header_at);
  }

  for (Mat& m : c.params.values)
    read_exact(reinterpret_cast<char*>(m.data()),
               sizeof(double) * static_cast<std::size_t>(m.size()));

  if (c.kind == "flr") {
    c.flr.omega = c.params.at("omega");
    c.flr.intercept = c.params.at("intercept");
  }
  return c;
}

inline ProjectionGrid checkpoint_grid(const Checkpoint& c) { return tensor_grid(c.grid_rules); }

inline Checkpoint make_dgpfm_checkpoint(const ModelSpec& spec, std::vector<Rule1D> rules,
                                        ParamStore ps,
                                        const std::optional<Normalization>& nz = std::nullopt) {
  Checkpoint c;
  c.kind = "dgpfm";
  c.model = spec;
  c.grid_rules = std::move(rules);
  c.params = std::move(ps);
  c.normalization = nz;
  return c;
}

inline Checkpoint make_flr_checkpoint(const FlrModel& m, const Vec& residual_var,
                                      const std::optional<Normalization>& nz = std::nullopt) {
  Checkpoint c;
  c.kind = "flr";
  c.flr = m;
  c.params.add("omega", m.omega);
  c.params.add("intercept", m.intercept);
  c.params.add("residual_var", residual_var);
  c.normalization = nz;
  return c;
}

// Per-component predictive variance stored with an flr checkpoint.
inline Vec flr_checkpoint_residual(const Checkpoint& c) {
  return c.params.at("residual_var").col(0);
}

}  // namespace dgpfm
