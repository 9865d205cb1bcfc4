#pragma once

// Behavioral cloning: state encoders and a small fully connected network
// trained by full-batch gradient descent on mean squared error.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "plga/captioner.hpp"
#include "plga/catalog.hpp"
#include "plga/core.hpp"
#include "plga/world.hpp"

namespace plga {

enum class PolicyVariant { gcbc, lga, plga };

inline const char* to_string(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::gcbc: return "gcbc";
    case PolicyVariant::lga: return "lga";
    case PolicyVariant::plga: return "plga";
  }
  return "?";
}

inline constexpr std::size_t kBowDim = 32;

// ---- encoders -------------------------------------------------------------

// Hashed bag of words: lowercase alphanumeric tokens, FNV bucket counts,
// L2-normalized (zero vector for no tokens).
inline std::vector<double> bow_embedding(const std::string& utterance) {
  std::vector<double> v(kBowDim, 0.0);
  std::string tok;
  auto flush = [&] {
    if (!tok.empty()) v[fnv1a64(tok) % kBowDim] += 1.0;
    tok.clear();
  };
  for (unsigned char c : utterance) {
    if (std::isalnum(c)) tok += static_cast<char>(std::tolower(c));
    else flush();
  }
  flush();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0)
    for (double& x : v) x /= std::sqrt(norm);
  return v;
}

// Two channels per cell, row-major: (kind id + 1) / |kinds| and
// (texture id + 1) / |textures|; empty cells are 0. Then the utterance block.
inline std::vector<double> encode_gcbc(const Scene& scene, const std::string& utterance,
                                       const Catalog& cat = default_catalog()) {
  const std::size_t cells = static_cast<std::size_t>(scene.width * scene.height);
  std::vector<double> v(cells * 2, 0.0);
  const double nk = static_cast<double>(cat.kinds().size()), nt = static_cast<double>(cat.textures().size());
  for (const auto& o : scene.objects) {
    const std::size_t i = static_cast<std::size_t>(o.cell.row * scene.width + o.cell.col) * 2;
    v[i] = (o.kind + 1) / nk;
    v[i + 1] = (o.texture + 1) / nt;
  }
  const auto bow = bow_embedding(utterance);
  v.insert(v.end(), bow.begin(), bow.end());
  return v;
}

inline std::vector<double> encode_abstract(const AbstractState& a) {
  if (a.mask.size() != static_cast<std::size_t>(a.width * a.height))
    throw Error(ErrorCode::contract, "mask size does not match grid dimensions");
  return {a.mask.begin(), a.mask.end()};
}

// Policy input for a variant. Masked variants read only the abstraction.
inline std::vector<double> encode_input(PolicyVariant v, const Scene& scene, const std::string& utterance,
                                        const AbstractState* abs, const Catalog& cat = default_catalog()) {
  if (v == PolicyVariant::gcbc) return encode_gcbc(scene, utterance, cat);
  if (!abs) throw Error(ErrorCode::contract, "masked policy input needs an abstraction");
  return encode_abstract(*abs);
}

struct EncodedExample {
  std::vector<double> input;
  std::vector<double> target;
  PolicyVariant variant = PolicyVariant::gcbc;
};

// ---- model ----------------------------------------------------------------

enum class Activation { tanh, identity };

struct PolicyModel {
  std::vector<std::size_t> layer_dims;
  std::vector<std::vector<double>> weights;  // layer l is dims[l+1] x dims[l], row-major
  std::vector<std::vector<double>> biases;
  Activation hidden = Activation::tanh;
  std::uint64_t rng_seed = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();

  std::size_t layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  // Uniform Glorot initialization, zero biases.
  static PolicyModel init(std::vector<std::size_t> dims, std::uint64_t seed, Activation act = Activation::tanh) {
    if (dims.size() < 2) throw Error(ErrorCode::contract, "model needs at least an input and an output layer");
    for (auto d : dims)
      if (d == 0) throw Error(ErrorCode::contract, "zero-width layer");
    PolicyModel m;
    m.layer_dims = std::move(dims);
    m.hidden = act;
    m.rng_seed = seed;
    Rng rng(derive_seed(seed, "init"));
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
      const std::size_t in = m.layer_dims[l], out = m.layer_dims[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::vector<double> w(in * out);
      for (auto& x : w) x = rng.uniform(-limit, limit);
      m.weights.push_back(std::move(w));
      m.biases.emplace_back(out, 0.0);
    }
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
};

namespace detail {

struct Workspace {
  std::vector<std::vector<double>> act;    // act[0] = input, act[l+1] = layer l output
  std::vector<std::vector<double>> delta;  // delta[l] = dLoss/dz for layer l
  std::vector<std::size_t> nonzero;

  explicit Workspace(const PolicyModel& m) {
    act.resize(m.layer_dims.size());
    for (std::size_t l = 0; l < m.layer_dims.size(); ++l) act[l].assign(m.layer_dims[l], 0.0);
    delta.resize(m.layers());
    for (std::size_t l = 0; l < m.layers(); ++l) delta[l].assign(m.layer_dims[l + 1], 0.0);
  }
};

inline void forward(const PolicyModel& m, const std::vector<double>& x, Workspace& ws) {
  ws.act[0] = x;
  ws.nonzero.clear();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != 0.0) ws.nonzero.push_back(i);
  for (std::size_t l = 0; l < m.layers(); ++l) {
    const std::size_t in = m.layer_dims[l], out = m.layer_dims[l + 1];
    const auto& w = m.weights[l];
    const auto& a = ws.act[l];
    auto& z = ws.act[l + 1];
    for (std::size_t o = 0; o < out; ++o) {
      double s = m.biases[l][o];
      const double* row = &w[o * in];
      if (l == 0) {
        for (auto i : ws.nonzero) s += row[i] * a[i];
      } else {
        for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      }
      const bool hidden_layer = l + 1 < m.layers();
      z[o] = hidden_layer && m.hidden == Activation::tanh ? std::tanh(s) : s;
    }
  }
}

// Accumulates scale * dLoss/dparams for one example; dout is dLoss/doutput.
inline void backward(const PolicyModel& m, Workspace& ws, const std::vector<double>& dout,
                     std::vector<std::vector<double>>& gw, std::vector<std::vector<double>>& gb) {
  const std::size_t L = m.layers();
  ws.delta[L - 1] = dout;
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = m.layer_dims[l], out = m.layer_dims[l + 1];
    const auto& a = ws.act[l];
    const auto& d = ws.delta[l];
    auto& g = gw[l];
    for (std::size_t o = 0; o < out; ++o) {
      gb[l][o] += d[o];
      double* row = &g[o * in];
      if (l == 0) {
        for (auto i : ws.nonzero) row[i] += d[o] * a[i];
      } else {
        for (std::size_t i = 0; i < in; ++i) row[i] += d[o] * a[i];
      }
    }
    if (l == 0) break;
    auto& prev = ws.delta[l - 1];
    const auto& w = m.weights[l];
    for (std::size_t i = 0; i < in; ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < out; ++o) s += w[o * in + i] * d[o];
      prev[i] = m.hidden == Activation::tanh ? s * (1.0 - a[i] * a[i]) : s;
    }
  }
}

inline void check_dims(const PolicyModel& m, const std::vector<double>& x) {
  if (x.size() != m.input_dim())
    throw Error(ErrorCode::contract, "input has dimension " + std::to_string(x.size()) + ", model expects " +
                                         std::to_string(m.input_dim()));
}

}  // namespace detail

inline std::vector<double> predict(const PolicyModel& m, const std::vector<double>& x) {
  detail::check_dims(m, x);
  detail::Workspace ws(m);
  detail::forward(m, x, ws);
  return ws.act.back();
}

inline std::vector<double> clamp_action(std::vector<double> v) {
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return v;
}

// Mean over examples and output coordinates of the squared error.
inline double mse_loss(const PolicyModel& m, const std::vector<EncodedExample>& data) {
  detail::Workspace ws(m);
  double sum = 0.0;
  for (const auto& e : data) {
    detail::check_dims(m, e.input);
    detail::forward(m, e.input, ws);
    for (std::size_t k = 0; k < e.target.size(); ++k) {
      const double r = ws.act.back()[k] - e.target[k];
      sum += r * r;
    }
  }
  return sum / static_cast<double>(data.size() * m.output_dim());
}

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 2000;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"hidden", c.hidden},
          {"activation", c.activation == Activation::tanh ? "tanh" : "identity"}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  static const std::set<std::string> known{"learning_rate", "epochs", "seed", "hidden", "activation"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw Error(ErrorCode::config, "unknown train key: " + it.key());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) {
    const auto a = j["activation"].get<std::string>();
    if (a != "tanh" && a != "identity") throw Error(ErrorCode::config, "activation must be tanh or identity");
    c.activation = a == "tanh" ? Activation::tanh : Activation::identity;
  }
  if (!(c.learning_rate > 0.0) || c.epochs <= 0) throw Error(ErrorCode::config, "learning rate and epochs must be positive");
  return c;
}

// Full-batch gradient descent. loss_curve[e] is the loss before update e; the
// final loss is recorded on the model.
inline PolicyModel train(const std::vector<EncodedExample>& data, const TrainConfig& cfg,
                         std::vector<double>* loss_curve = nullptr) {
  if (data.empty()) throw Error(ErrorCode::contract, "training needs at least one example");
  const std::size_t in = data.front().input.size(), out = data.front().target.size();
  for (const auto& e : data)
    if (e.input.size() != in || e.target.size() != out)
      throw Error(ErrorCode::contract, "examples have inconsistent dimensions");
  if (!(cfg.learning_rate > 0.0) || cfg.epochs <= 0) throw Error(ErrorCode::contract, "bad training configuration");
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(out);
  PolicyModel m = PolicyModel::init(dims, cfg.seed, cfg.activation);
  detail::Workspace ws(m);
  std::vector<std::vector<double>> gw(m.layers()), gb(m.layers());
  std::vector<double> dout(out);
  const double scale = 2.0 / static_cast<double>(data.size() * out);
  if (loss_curve) loss_curve->clear();
  double loss = 0.0;
  for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t l = 0; l < m.layers(); ++l) {
      gw[l].assign(m.weights[l].size(), 0.0);
      gb[l].assign(m.biases[l].size(), 0.0);
    }
    double sum = 0.0;
    for (const auto& e : data) {
      detail::forward(m, e.input, ws);
      for (std::size_t k = 0; k < out; ++k) {
        const double r = ws.act.back()[k] - e.target[k];
        sum += r * r;
        dout[k] = scale * r;
      }
      detail::backward(m, ws, dout, gw, gb);
    }
    loss = sum / static_cast<double>(data.size() * out);
    if (!std::isfinite(loss))
      throw Error(ErrorCode::divergence, "training loss became non-finite at epoch " + std::to_string(epoch));
    if (epoch == cfg.epochs) break;
    if (loss_curve) loss_curve->push_back(loss);
    for (std::size_t l = 0; l < m.layers(); ++l) {
      for (std::size_t i = 0; i < m.weights[l].size(); ++i) m.weights[l][i] -= cfg.learning_rate * gw[l][i];
      for (std::size_t i = 0; i < m.biases[l].size(); ++i) m.biases[l][i] -= cfg.learning_rate * gb[l][i];
    }
  }
  m.final_loss = loss;
  return m;
}

// Backprop vs central differences on a random subsample of parameters.
// Relative error is |a - b| / max(|a|, |b|, 1e-6).
inline double gradient_check(const PolicyModel& model, const EncodedExample& ex, std::uint64_t seed = 0,
                             double fraction = 0.05, double h = 1e-5) {
  detail::check_dims(model, ex.input);
  PolicyModel m = model;
  const std::size_t out = m.output_dim();
  auto loss = [&](const PolicyModel& mm) {
    auto y = predict(mm, ex.input);
    double s = 0.0;
    for (std::size_t k = 0; k < out; ++k) s += (y[k] - ex.target[k]) * (y[k] - ex.target[k]);
    return s / static_cast<double>(out);
  };
  detail::Workspace ws(m);
  std::vector<std::vector<double>> gw(m.layers()), gb(m.layers());
  for (std::size_t l = 0; l < m.layers(); ++l) {
    gw[l].assign(m.weights[l].size(), 0.0);
    gb[l].assign(m.biases[l].size(), 0.0);
  }
  detail::forward(m, ex.input, ws);
  std::vector<double> dout(out);
  for (std::size_t k = 0; k < out; ++k) dout[k] = 2.0 * (ws.act.back()[k] - ex.target[k]) / static_cast<double>(out);
  // Dense pass so every weight receives its gradient.
  ws.nonzero.clear();
  for (std::size_t i = 0; i < ex.input.size(); ++i) ws.nonzero.push_back(i);
  detail::backward(m, ws, dout, gw, gb);

  Rng rng(derive_seed(seed, "gradcheck"));
  double worst = 0.0;
  bool any = false;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = loss(m);
    param = saved - h;
    const double down = loss(m);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
    any = true;
  };
  for (std::size_t l = 0; l < m.layers(); ++l) {
    for (std::size_t i = 0; i < m.weights[l].size(); ++i)
      if (rng.uniform() < fraction) probe(m.weights[l][i], gw[l][i]);
    for (std::size_t i = 0; i < m.biases[l].size(); ++i)
      if (rng.uniform() < fraction) probe(m.biases[l][i], gb[l][i]);
  }
  if (!any) probe(m.biases.back()[0], gb.back()[0]);
  return worst;
}

// ---- persistence ----------------------------------------------------------

inline nlohmann::json to_json(const PolicyModel& m) {
  return {{"layer_dims", m.layer_dims},
          {"activation", m.hidden == Activation::tanh ? "tanh" : "identity"},
          {"rng_seed", m.rng_seed},
          {"final_loss", std::isfinite(m.final_loss) ? nlohmann::json(m.final_loss) : nlohmann::json(nullptr)},
          {"weights", m.weights},
          {"biases", m.biases}};
}

inline PolicyModel model_from_json(const nlohmann::json& j) {
  PolicyModel m;
  m.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
  m.hidden = j.at("activation").get<std::string>() == "tanh" ? Activation::tanh : Activation::identity;
  m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  if (!j.at("final_loss").is_null()) m.final_loss = j["final_loss"].get<double>();
  m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
  m.biases = j.at("biases").get<std::vector<std::vector<double>>>();
  if (m.weights.size() + 1 != m.layer_dims.size() || m.biases.size() != m.weights.size())
    throw Error(ErrorCode::data, "checkpoint layer count mismatch");
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    if (m.weights[l].size() != m.layer_dims[l] * m.layer_dims[l + 1] || m.biases[l].size() != m.layer_dims[l + 1])
      throw Error(ErrorCode::data, "checkpoint layer " + std::to_string(l) + " has the wrong shape");
    for (double w : m.weights[l])
      if (!std::isfinite(w)) throw Error(ErrorCode::data, "checkpoint contains a non-finite weight");
  }
  return m;
}

inline std::string loss_curve_csv(const std::vector<double>& curve) {
  std::ostringstream os;
  os << "epoch,loss\n" << std::setprecision(17);
  for (std::size_t e = 0; e < curve.size(); ++e) os << e << ',' << curve[e] << '\n';
  return os.str();
}

}  // namespace plga
