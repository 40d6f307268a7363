#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dgpfm/ad.hpp"
#include "dgpfm/data.hpp"
#include "dgpfm/kernels.hpp"
#include "dgpfm/quadrature.hpp"
#include "dgpfm/transforms.hpp"

// The layered deep-GP functional map: a GP encoder pulls each observed input
// function onto the shared projection grid, channels are mixed linearly, the
// latent field passes through alternating linear transforms and GP
// activations, and a GP interpolation head projects onto the requested
// output locations under a Gaussian likelihood.

namespace dgpfm {

enum class TransformKind : uint8_t { Quadrature, Fourier, Dense };
enum class ForwardMode : uint8_t { Train, PredictSample, PredictMean };
enum class ActSampling : uint8_t { Diagonal, MeanOnly };

struct LayerDesc {
  bool is_linear = true;
  // linear layers
  TransformKind kind = TransformKind::Quadrature;
  std::vector<int> modes;  // Fourier: retained mode count per dimension
  // nonlinear layers
  int inducing = 0;
  KernelSpec activation{};

  static LayerDesc linear(TransformKind k, std::vector<int> fourier_modes = {}) {
    LayerDesc l;
    l.is_linear = true;
    l.kind = k;
    l.modes = std::move(fourier_modes);
    return l;
  }
  static LayerDesc nonlinear(int s, KernelFamily f = KernelFamily::SquaredExponential) {
    LayerDesc l;
    l.is_linear = false;
    l.inducing = s;
    l.activation = make_kernel(f, 1);
    return l;
  }
};

struct ModelSpec {
  int d = 1, d0 = 1, d1 = 1, channels = 1;
  std::vector<LayerDesc> layers;
  KernelSpec input_kernel{};
  KernelSpec interp_kernel{};
  double weight_penalty = 0.0;  // isotropic Gaussian strength on linear weights
  bool mean_field = false;      // diagonal covariance for the latent posteriors

  int nonlinear_count() const {
    int n = 0;
    for (const LayerDesc& l : layers)
      if (!l.is_linear) ++n;
    return n;
  }

  void validate() const {
    if (d < 1 || d > 3) throw std::invalid_argument("model: d must be 1, 2, or 3");
    if (d0 < 1 || d1 < 1) throw std::invalid_argument("model: component counts must be positive");
    if (channels < 1) throw std::invalid_argument("model: need at least one channel");
    if (layers.empty()) throw std::invalid_argument("model: need at least one layer");
    if (!layers.front().is_linear || !layers.back().is_linear)
      throw std::invalid_argument("model: first and last layers must be linear");
    for (const LayerDesc& l : layers) {
      if (l.is_linear) {
        if (l.kind == TransformKind::Fourier) {
          if (static_cast<int>(l.modes.size()) != d)
            throw std::invalid_argument("model: fourier layer needs one mode count per dimension");
          for (int m : l.modes)
            if (m < 1) throw std::invalid_argument("model: fourier mode counts must be positive");
        }
      } else {
        if (l.inducing < 1) throw std::invalid_argument("model: need at least one inducing point");
        if (l.activation.dim != 1)
          throw std::invalid_argument("model: activation kernels are one-dimensional");
      }
    }
    if (input_kernel.dim != d || interp_kernel.dim != d)
      throw std::invalid_argument("model: kernel dimension mismatch");
    if (weight_penalty < 0) throw std::invalid_argument("model: weight penalty must be nonnegative");
  }
};

inline ModelSpec make_model_spec(int d, int d0, int d1, int channels) {
  ModelSpec s;
  s.d = d;
  s.d0 = d0;
  s.d1 = d1;
  s.channels = channels;
  s.input_kernel = make_kernel(KernelFamily::Matern52, d);
  s.interp_kernel = make_kernel(KernelFamily::Matern52, d);
  return s;
}

// ---------------------------------------------------------------------------
// Ordered, named parameter tensors. The order doubles as the checkpoint
// manifest and the flat gradient layout.
// ---------------------------------------------------------------------------

struct ParamStore {
  std::vector<std::string> names;
  std::vector<Mat> values;

  int add(std::string name, Mat v) {
    names.push_back(std::move(name));
    values.push_back(std::move(v));
    return static_cast<int>(values.size()) - 1;
  }
  int find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
  const Mat& at(const std::string& name) const {
    int i = find(name);
    if (i < 0) throw std::invalid_argument("unknown parameter: " + name);
    return values[static_cast<std::size_t>(i)];
  }
  Mat& at(const std::string& name) {
    int i = find(name);
    if (i < 0) throw std::invalid_argument("unknown parameter: " + name);
    return values[static_cast<std::size_t>(i)];
  }
  std::size_t size() const { return values.size(); }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const Mat& m : values) n += m.size();
    return n;
  }
  Vec flatten() const {
    Vec out(scalar_count());
    Eigen::Index at = 0;
    for (const Mat& m : values) {
      out.segment(at, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
      at += m.size();
    }
    return out;
  }
  void unflatten(const Vec& flat) {
    Eigen::Index at = 0;
    for (Mat& m : values) {
      Eigen::Map<Vec>(m.data(), m.size()) = flat.segment(at, m.size());
      at += m.size();
    }
  }
};

namespace param_names {
inline std::string input_kernel(int j) { return "input_kernel/" + std::to_string(j); }
inline std::string layer_quad(int l, int j) {
  return "layer" + std::to_string(l) + "/quad/dim" + std::to_string(j);
}
inline std::string layer_fourier(int l, int j) {
  return "layer" + std::to_string(l) + "/fourier/dim" + std::to_string(j);
}
inline std::string layer_dense(int l) { return "layer" + std::to_string(l) + "/dense"; }
inline std::string layer_beta(int l) { return "layer" + std::to_string(l) + "/beta"; }
inline std::string layer_act_kernel(int l) { return "layer" + std::to_string(l) + "/act_kernel"; }
inline std::string layer_q_mu(int l) { return "layer" + std::to_string(l) + "/q_mu"; }
inline std::string layer_q_l(int l) { return "layer" + std::to_string(l) + "/q_l"; }
}  // namespace param_names

// Initialization keeps latent variance roughly unit through every stage so
// stacked layers neither collapse nor blow up: mixing weights ~ N(0, 1/d0),
// per-axis nodal weights ~ N(0, n_j/d) (the quadrature weights contribute
// 1/n_j each and axes add), retained spectra ~ N(0, n_j/(4 M_j d)), dense
// weights ~ N(0, Q), head weights ~ N(0, 1/C). Latent posteriors start at
// the prior (zero mean, identity factor).
inline ParamStore init_params(const ModelSpec& spec, const ProjectionGrid& grid, uint64_t seed) {
  spec.validate();
  if (grid.dim() != spec.d) throw std::invalid_argument("init_params: grid dimension mismatch");
  NormalSource noise(mix_seed({seed, 0x696e6974}));
  ParamStore ps;
  const int c = spec.channels;
  const double raw_noise = softplus_inv(1e-2);
  const double raw_unit = softplus_inv(1.0);

  for (int j = 0; j < spec.d0; ++j)
    ps.add(param_names::input_kernel(j), default_kernel_params(spec.input_kernel, 1.0, 0.2));
  ps.add("input_noise", Mat::Constant(spec.d0, 1, raw_noise));
  ps.add("w0", std::sqrt(1.0 / spec.d0) * noise.draw_matrix(spec.d0, c));

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerDesc& layer = spec.layers[l];
    const int li = static_cast<int>(l);
    if (layer.is_linear) {
      if (layer.kind == TransformKind::Quadrature) {
        for (int j = 0; j < spec.d; ++j) {
          int n = grid.size_along(j);
          ps.add(param_names::layer_quad(li, j),
                 std::sqrt(double(n) / spec.d) * noise.draw_matrix(n, n));
        }
      } else if (layer.kind == TransformKind::Fourier) {
        for (int j = 0; j < spec.d; ++j) {
          int n = grid.size_along(j);
          int m = layer.modes[static_cast<std::size_t>(j)];
          ps.add(param_names::layer_fourier(li, j),
                 std::sqrt(double(n) / (4.0 * m * spec.d)) * noise.draw_matrix(2 * m, 1));
        }
      } else {
        Eigen::Index q = grid.count();
        ps.add(param_names::layer_dense(li), std::sqrt(double(q)) * noise.draw_matrix(q, q));
      }
    } else {
      const int s = layer.inducing;
      Mat beta(s, 1);
      for (int i = 0; i < s; ++i)
        beta(i, 0) = (s == 1) ? 0.0 : -3.0 + 6.0 * double(i) / (s - 1);
      ps.add(param_names::layer_beta(li), beta);
      ps.add(param_names::layer_act_kernel(li), default_kernel_params(layer.activation, 1.0, 1.0));
      ps.add(param_names::layer_q_mu(li), Mat::Zero(s, 1));
      if (spec.mean_field) {
        ps.add(param_names::layer_q_l(li), Mat::Constant(s, 1, raw_unit));
      } else {
        Mat packed = Mat::Zero(static_cast<Eigen::Index>(s) * (s + 1) / 2, 1);
        for (int i = 0; i < s; ++i) packed(static_cast<Eigen::Index>(i) * (i + 1) / 2 + i, 0) = raw_unit;
        ps.add(param_names::layer_q_l(li), packed);
      }
    }
  }

  ps.add("interp_kernel", default_kernel_params(spec.interp_kernel, 1.0, 0.2));
  ps.add("w1", std::sqrt(1.0 / c) * noise.draw_matrix(c, spec.d1));
  ps.add("out_noise", Mat::Constant(spec.d1, 1, raw_noise));
  return ps;
}

// ---------------------------------------------------------------------------
// The staged computation graph: one leaf per parameter tensor on a tape,
// with the forward pass assembled on demand.
// ---------------------------------------------------------------------------

class ModelGraph {
 public:
  ModelGraph(ad::Tape& t, const ModelSpec& spec, const ProjectionGrid& grid,
             const ParamStore& ps, bool trainable = true)
      : t_(&t), spec_(&spec), grid_(&grid), ps_(&ps) {
    spec.validate();
    leaves_.reserve(ps.size());
    for (const Mat& v : ps.values) leaves_.push_back(t.leaf(v, trainable));
    act_chol_.resize(spec.layers.size());
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      if (spec.layers[l].is_linear) continue;
      const int li = static_cast<int>(l);
      ad::Var beta = leaf(param_names::layer_beta(li));
      ad::Var kp = leaf(param_names::layer_act_kernel(li));
      ad::Var k_bb = kop::gram_cross_xz(t, spec.layers[l].activation, beta, beta, kp);
      act_chol_[l] = ad::chol(k_bb);
    }
  }

  ad::Tape& tape() const { return *t_; }
  const ModelSpec& spec() const { return *spec_; }
  const ProjectionGrid& grid() const { return *grid_; }
  const std::vector<ad::Var>& leaves() const { return leaves_; }

  ad::Var leaf(const std::string& name) const {
    int i = ps_->find(name);
    if (i < 0) throw std::invalid_argument("unknown parameter: " + name);
    return leaves_[static_cast<std::size_t>(i)];
  }

  // Whitening factor A_l of the activation kernel at the inducing inputs.
  ad::Var activation_chol(int layer) const {
    const std::optional<ad::Var>& v = act_chol_.at(static_cast<std::size_t>(layer));
    if (!v) throw std::invalid_argument("activation_chol: layer is linear");
    return *v;
  }

  // GP encoder: posterior of each input component on the grid given the
  // noisy observations, one reparameterized sample (or the mean), plus the
  // marginal log density of the observations.
  std::pair<ad::Var, ad::Var> encode_input(const Mat& x_in, const Mat& f_in,
                                           NormalSource& noise, bool sample) const {
    ad::Tape& t = *t_;
    const Eigen::Index n = x_in.rows(), q = grid_->count();
    if (n < 1) throw std::invalid_argument("encode_input: need at least one observation");
    ad::Var noise_raw = leaf("input_noise");
    std::vector<ad::Var> components, logps;
    for (int j = 0; j < spec_->d0; ++j) {
      ad::Var kp = leaf(param_names::input_kernel(j));
      ad::Var sigma2 = ad::shift(ad::cwise_softplus(ad::block(noise_raw, j, 0, 1, 1)), 1e-8);
      ad::Var k_obs = ad::add_diag(kop::gram_sym(t, spec_->input_kernel, x_in, kp), sigma2);
      ad::Var l_obs = ad::chol(k_obs);
      ad::Var cross = kop::gram_cross(t, spec_->input_kernel, grid_->nodes, x_in, kp);
      ad::Var v = ad::solve_lower(l_obs, ad::transpose(cross));  // (n x q)
      ad::Var fj = t.constant(f_in.col(j));
      ad::Var alpha = ad::solve_lower(l_obs, fj);
      ad::Var mean = ad::matmul(ad::transpose(v), alpha);
      if (sample) {
        ad::Var k_qq = kop::gram_sym(t, spec_->input_kernel, grid_->nodes, kp);
        ad::Var post_cov = ad::sub(k_qq, ad::matmul(ad::transpose(v), v));
        ad::Var l_post = ad::chol(post_cov);
        ad::Var eps = t.constant(noise.draw_matrix(q, 1));
        components.push_back(ad::add(mean, ad::matmul(l_post, eps)));
      } else {
        components.push_back(mean);
      }
      ad::Var logdet = ad::sum(ad::cwise_log(ad::diag_part(l_obs)));
      ad::Var quad = ad::scale(0.5, ad::sum(ad::cwise_square(alpha)));
      logps.push_back(ad::neg(ad::shift(ad::add(logdet, quad), 0.5 * double(n) * kLog2Pi)));
    }
    ad::Var f_q = (components.size() == 1) ? components[0] : ad::concat_cols(components);
    ad::Var logp = (logps.size() == 1) ? logps[0] : ad::add_n(logps);
    return {f_q, logp};
  }

  ad::Var mix_channels(ad::Var f_q) const { return ad::matmul(f_q, leaf("w0")); }

  ad::Var linear_layer(int layer, ad::Var h) const {
    const LayerDesc& l = spec_->layers.at(static_cast<std::size_t>(layer));
    if (!l.is_linear) throw std::invalid_argument("linear_layer: layer is nonlinear");
    if (l.kind == TransformKind::Quadrature) {
      std::vector<ad::Var> w;
      for (int j = 0; j < spec_->d; ++j) w.push_back(leaf(param_names::layer_quad(layer, j)));
      return transforms::qr_apply(w, h, *grid_);
    }
    if (l.kind == TransformKind::Fourier) {
      std::vector<ad::Var> s;
      for (int j = 0; j < spec_->d; ++j) s.push_back(leaf(param_names::layer_fourier(layer, j)));
      return transforms::ft_apply(s, h, *grid_);
    }
    return transforms::full_apply(leaf(param_names::layer_dense(layer)), h, *grid_);
  }

  // GP activation applied elementwise to the latent field, conditioned on
  // whitened inducing values eta_bar through the factor A_l.
  ad::Var activation_layer(int layer, ad::Var eta_bar, ad::Var h, NormalSource& noise,
                           ActSampling sampling) const {
    ad::Tape& t = *t_;
    const LayerDesc& l = spec_->layers.at(static_cast<std::size_t>(layer));
    if (l.is_linear) throw std::invalid_argument("activation_layer: layer is linear");
    const Eigen::Index q = t.val(h).rows(), c = t.val(h).cols();
    ad::Var a_fac = activation_chol(layer);
    ad::Var beta = leaf(param_names::layer_beta(layer));
    ad::Var kp = leaf(param_names::layer_act_kernel(layer));
    ad::Var z = ad::reshape(h, q * c, 1);
    ad::Var cross = kop::gram_cross_xz(t, l.activation, z, beta, kp);  // (qc x s)
    ad::Var mean = ad::matmul(cross, ad::solve_lower_t(a_fac, eta_bar));
    ad::Var out = mean;
    if (sampling == ActSampling::Diagonal) {
      ad::Var b = ad::solve_lower(a_fac, ad::transpose(cross));  // (s x qc)
      ad::Var tot = kop::total_variance(l.activation, kp);
      ad::Var prior = ad::scalar_mul(tot, t.constant(Mat::Ones(q * c, 1)));
      ad::Var variance = ad::sub(prior, ad::transpose(ad::colsum(ad::cwise_square(b))));
      ad::Var sd = ad::cwise_sqrt(ad::shift(ad::cwise_clamp_min(variance, 0.0), 1e-14));
      ad::Var eps = t.constant(noise.draw_matrix(q * c, 1));
      out = ad::add(mean, ad::cwise_mul(sd, eps));
    }
    return ad::reshape(out, q, c);
  }

  // Interpolates the latent field from the grid onto x_out with the
  // dedicated interpolation kernel, then aggregates channels.
  ad::Var project_output(ad::Var h, const Mat& x_out) const {
    ad::Tape& t = *t_;
    if (x_out.rows() < 1) throw std::invalid_argument("project_output: need output locations");
    ad::Var h_out = h;
    const bool on_grid = x_out.rows() == grid_->nodes.rows() && x_out.cols() == grid_->nodes.cols() &&
                         std::memcmp(x_out.data(), grid_->nodes.data(),
                                     sizeof(double) * static_cast<std::size_t>(x_out.size())) == 0;
    if (!on_grid) {
      if ((x_out.array() < -1e-6).any() || (x_out.array() > 1.0 + 1e-6).any())
        throw std::invalid_argument("project_output: location outside the normalized domain");
      ad::Var kp = leaf("interp_kernel");
      if (!interp_chol_)
        interp_chol_ = ad::chol(kop::gram_sym(t, spec_->interp_kernel, grid_->nodes, kp));
      ad::Var cross = kop::gram_cross(t, spec_->interp_kernel, x_out, grid_->nodes, kp);
      h_out = ad::matmul(cross, ad::solve_lower_t(*interp_chol_, ad::solve_lower(*interp_chol_, h)));
    }
    return ad::matmul(h_out, leaf("w1"));
  }

  ad::Var noise_variances() const {
    return ad::shift(ad::cwise_softplus(leaf("out_noise")), 1e-8);
  }

  ad::Var log_likelihood(ad::Var u, const Mat& y) const {
    ad::Tape& t = *t_;
    const double n = double(y.rows());
    ad::Var v = noise_variances();
    ad::Var diff = ad::sub(t.constant(y), u);
    ad::Var per_comp = ad::transpose(ad::colsum(ad::cwise_square(diff)));  // (d1 x 1)
    ad::Var quad = ad::sum(ad::cwise_div(per_comp, v));
    ad::Var logdet = ad::scale(0.5 * n, ad::sum(ad::cwise_log(v)));
    return ad::neg(
        ad::shift(ad::add(ad::scale(0.5, quad), logdet), 0.5 * n * double(y.cols()) * kLog2Pi));
  }

  // Sum of squared linear-transform weights, for the optional prior penalty.
  ad::Var weight_square_norm() const {
    std::vector<ad::Var> parts;
    for (std::size_t l = 0; l < spec_->layers.size(); ++l) {
      const LayerDesc& layer = spec_->layers[l];
      if (!layer.is_linear) continue;
      const int li = static_cast<int>(l);
      if (layer.kind == TransformKind::Quadrature) {
        for (int j = 0; j < spec_->d; ++j)
          parts.push_back(ad::sum(ad::cwise_square(leaf(param_names::layer_quad(li, j)))));
      } else if (layer.kind == TransformKind::Fourier) {
        for (int j = 0; j < spec_->d; ++j)
          parts.push_back(ad::sum(ad::cwise_square(leaf(param_names::layer_fourier(li, j)))));
      } else {
        parts.push_back(ad::sum(ad::cwise_square(leaf(param_names::layer_dense(li)))));
      }
    }
    return ad::add_n(parts);
  }

  struct Fwd {
    ad::Var u;
    ad::Var logp_input;
  };

  // eta_bars: one whitened inducing-value vector per nonlinear layer, in
  // layer order. Train and PredictSample propagate sampled fields;
  // PredictMean propagates means only.
  Fwd forward(const FunctionPair& inst, const std::vector<ad::Var>& eta_bars,
              NormalSource& noise, ForwardMode mode) const {
    if (static_cast<int>(eta_bars.size()) != spec_->nonlinear_count())
      throw std::invalid_argument("forward: need one eta vector per nonlinear layer");
    const bool sample = mode != ForwardMode::PredictMean;
    auto [f_q, logp] = encode_input(inst.x_in, inst.f_in, noise, sample);
    ad::Var h = mix_channels(f_q);
    int nl = 0;
    for (std::size_t l = 0; l < spec_->layers.size(); ++l) {
      const int li = static_cast<int>(l);
      if (spec_->layers[l].is_linear) {
        h = linear_layer(li, h);
      } else {
        h = activation_layer(li, eta_bars[static_cast<std::size_t>(nl++)], h, noise,
                             sample ? ActSampling::Diagonal : ActSampling::MeanOnly);
      }
    }
    return {project_output(h, inst.x_out), logp};
  }

 private:
  ad::Tape* t_;
  const ModelSpec* spec_;
  const ProjectionGrid* grid_;
  const ParamStore* ps_;
  std::vector<ad::Var> leaves_;
  std::vector<std::optional<ad::Var>> act_chol_;
  mutable std::optional<ad::Var> interp_chol_;
};

}  // namespace dgpfm
