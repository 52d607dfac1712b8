#include "mbs/autograd.hpp"

#include <cmath>
#include <limits>

#include "mbs/errors.hpp"

namespace mbs {

struct TapeAccess {
  static Tape make(const Model& model, const ParameterSet& params, Mode mode) {
    Tape t;
    t.model_ = &model;
    t.params_ = &params;
    t.mode_ = mode;
    return t;
  }
  static std::vector<LayerRecord>& records(Tape& t) { return t.records_; }
  static void set_output(Tape& t, Tensor out) { t.output_ = std::move(out); }
  static std::optional<Tensor>& loss_grad(Tape& t) { return t.loss_grad_; }
  static double& loss_scale(Tape& t) { return t.loss_scale_; }
  static bool& consumed(Tape& t) { return t.consumed_; }
  static const Model& model(const Tape& t) { return *t.model_; }
  static const ParameterSet& params(const Tape& t) { return *t.params_; }
};

namespace {

// ---- Batchnorm helpers ----

struct FeatureLayout {
  std::size_t batch = 0;
  std::size_t features = 0;
  std::size_t spatial = 1;  // H*W for 4-D input
  std::size_t index(std::size_t n, std::size_t f, std::size_t s) const { return (n * features + f) * spatial + s; }
};

FeatureLayout feature_layout(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw ShapeError("batchnorm expects (N,F) or (N,C,H,W) input, got " + shape_to_string(x.shape()));
}

// ---- Layer forwards ----

Tensor dense_forward(const DenseSpec& d, const Tensor& x, const Tensor& w, const Tensor* b) {
  const std::size_t n = x.dim(0);
  Tensor y({n, d.out});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < d.out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d.in; ++i) acc += w[o * d.in + i] * x[r * d.in + i];
      y[r * d.out + o] = b ? acc + (*b)[o] : acc;
    }
  }
  return y;
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, oh, ow, k, stride, pad;
  // Input index for output position (y, x) and kernel offset (ky, kx), or npos when in padding.
  std::size_t input_index(std::size_t b, std::size_t ch, std::size_t y, std::size_t xo, std::size_t ky,
                          std::size_t kx) const {
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride + kx) - static_cast<std::ptrdiff_t>(pad);
    if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) {
      return std::numeric_limits<std::size_t>::max();
    }
    return ((b * c + ch) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
  }
  std::size_t weight_index(std::size_t oc, std::size_t ch, std::size_t ky, std::size_t kx) const {
    return ((oc * c + ch) * k + ky) * k + kx;
  }
  std::size_t output_index(std::size_t b, std::size_t oc, std::size_t y, std::size_t xo) const {
    return ((b * o + oc) * oh + y) * ow + xo;
  }
};

ConvGeometry conv_geometry(const Conv2dSpec& cs, const Tensor& x, const Shape& out_shape) {
  return {x.dim(0), cs.in_ch, x.dim(2), x.dim(3), cs.out_ch, out_shape[1], out_shape[2], cs.kernel, cs.stride,
          cs.padding};
}

constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

Tensor conv_forward(const ConvGeometry& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y({g.n, g.o, g.oh, g.ow});
  for (std::size_t bn = 0; bn < g.n; ++bn)
    for (std::size_t oc = 0; oc < g.o; ++oc)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < g.c; ++ch)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::size_t ii = g.input_index(bn, ch, oy, ox, ky, kx);
                if (ii != kNoIndex) acc += w[g.weight_index(oc, ch, ky, kx)] * x[ii];
              }
          y[g.output_index(bn, oc, oy, ox)] = acc + b[oc];
        }
  return y;
}

Tensor maxpool_forward(const MaxPool2dSpec& p, const Tensor& x, const Shape& out_shape,
                       std::vector<std::size_t>& argmax) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  Tensor y({n, c, oh, ow});
  argmax.assign(y.numel(), 0);
  std::size_t out = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox, ++out) {
          std::size_t best = ((b * c + ch) * h + oy * p.stride) * w + ox * p.stride;
          for (std::size_t ky = 0; ky < p.kernel; ++ky)
            for (std::size_t kx = 0; kx < p.kernel; ++kx) {
              const std::size_t ii = ((b * c + ch) * h + oy * p.stride + ky) * w + ox * p.stride + kx;
              if (x[ii] > x[best]) best = ii;
            }
          y[out] = x[best];
          argmax[out] = best;
        }
  return y;
}

Shape with_batch(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& running, Mode mode,
                         double epsilon, double momentum, BatchNormCache* cache) {
  const FeatureLayout L = feature_layout(x);
  if (gamma.numel() != L.features || beta.numel() != L.features || running.mean.size() != L.features ||
      running.var.size() != L.features) {
    throw ShapeError("batchnorm parameters do not match " + std::to_string(L.features) + " features");
  }
  const std::size_t m = L.batch * L.spatial;
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  std::vector<double> inv_std(L.features);
  for (std::size_t f = 0; f < L.features; ++f) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t s = 0; s < L.spatial; ++s) mean += x[L.index(n, f, s)];
      mean /= static_cast<double>(m);
      for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t s = 0; s < L.spatial; ++s) {
          const double d = x[L.index(n, f, s)] - mean;
          var += d * d;
        }
      var /= static_cast<double>(m);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running.mean[f] = (1.0 - momentum) * running.mean[f] + momentum * mean;
      running.var[f] = (1.0 - momentum) * running.var[f] + momentum * unbiased;
    } else {
      mean = running.mean[f];
      var = running.var[f];
    }
    const double denom = var + epsilon;
    inv_std[f] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t s = 0; s < L.spatial; ++s) {
        const std::size_t i = L.index(n, f, s);
        xhat[i] = (x[i] - mean) * inv_std[f];
        y[i] = gamma[f] * xhat[i] + beta[f];
      }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

std::size_t Tape::retained_elements() const {
  std::size_t n = output_.numel();
  for (const LayerRecord& r : records_) {
    n += r.input.numel() + r.argmax.size();
    if (r.batchnorm) n += r.batchnorm->normalized.numel() + r.batchnorm->inv_std.size();
  }
  if (loss_grad_) n += loss_grad_->numel();
  return n;
}

double Tape::min_kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const LayerRecord& r : records_) {
    const LayerSpec& spec = model_->spec().layers[r.layer];
    if (std::holds_alternative<ReluSpec>(spec)) {
      for (double v : r.input.data()) margin = std::min(margin, std::abs(v));
    } else if (const auto* p = std::get_if<MaxPool2dSpec>(&spec)) {
      const Tensor& x = r.input;
      const std::size_t h = x.dim(2), w = x.dim(3);
      const Shape& out = model_->shape_at(r.layer + 1);
      std::size_t o = 0;
      for (std::size_t bc = 0; bc < x.dim(0) * x.dim(1); ++bc)
        for (std::size_t oy = 0; oy < out[1]; ++oy)
          for (std::size_t ox = 0; ox < out[2]; ++ox, ++o) {
            const double best = x[r.argmax[o]];
            for (std::size_t ky = 0; ky < p->kernel; ++ky)
              for (std::size_t kx = 0; kx < p->kernel; ++kx) {
                const std::size_t ii = (bc * h + oy * p->stride + ky) * w + ox * p->stride + kx;
                if (ii != r.argmax[o]) margin = std::min(margin, best - x[ii]);
              }
          }
    }
  }
  return margin;
}

ForwardResult forward(Model& model, const ParameterSet& params, const Tensor& input, Mode mode) {
  if (input.rank() != model.input_shape().size() + 1 ||
      !std::equal(model.input_shape().begin(), model.input_shape().end(), input.shape().begin() + 1)) {
    throw ShapeError("input " + shape_to_string(input.shape()) + " does not match model input (N," +
                     shape_to_string(model.input_shape()).substr(1));
  }
  const std::size_t n = input.dim(0);
  Tape tape = TapeAccess::make(model, params, mode);
  auto& records = TapeAccess::records(tape);
  Tensor x = input;

  for (std::size_t k = 0; k < model.layer_count(); ++k) {
    const LayerSpec& layer = model.spec().layers[k];
    const Shape out_shape = with_batch(n, model.shape_at(k + 1));
    LayerRecord rec;
    rec.layer = k;
    Tensor y;
    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      y = dense_forward(*d, x, params.at(Model::param_name(k, "weight")),
                        d->bias ? &params.at(Model::param_name(k, "bias")) : nullptr);
    } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
      y = conv_forward(conv_geometry(*c, x, model.shape_at(k + 1)), x, params.at(Model::param_name(k, "weight")),
                       params.at(Model::param_name(k, "bias")));
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      y = Tensor(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    } else if (const auto* b = std::get_if<BatchNormSpec>(&layer)) {
      BatchNormCache cache;
      y = batchnorm_forward(x, params.at(Model::param_name(k, "gamma")), params.at(Model::param_name(k, "beta")),
                            model.running_stats(k), mode, b->epsilon, b->momentum, &cache);
      rec.batchnorm = std::move(cache);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      y = x.reshaped(out_shape);
    } else if (const auto* p = std::get_if<MaxPool2dSpec>(&layer)) {
      y = maxpool_forward(*p, x, model.shape_at(k + 1), rec.argmax);
    }
    if (!y.all_finite()) throw OverflowError(k, layer_name(layer) + " produced a non-finite value");
    rec.input = std::move(x);
    records.push_back(std::move(rec));
    x = std::move(y);
  }
  TapeAccess::set_output(tape, x);
  return {std::move(x), std::move(tape)};
}

LossValue attach_loss(Tape& tape, const LossSpec& spec, const Tensor& target) {
  if (tape.consumed()) throw TapeError("tape already consumed by backward");
  if (tape.has_loss()) throw TapeError("tape already has a loss attached");
  LossValue v = mean_loss(spec, tape.output(), target);
  TapeAccess::loss_grad(tape) = mean_loss_grad(spec, tape.output(), target);
  return v;
}

void scale_loss(Tape& tape, double factor) {
  if (tape.consumed()) throw TapeError("tape already consumed by backward");
  if (!tape.has_loss()) throw TapeError("scale_loss needs an attached loss");
  TapeAccess::loss_scale(tape) *= factor;
}

GradientSet backward(Tape& tape, double seed) {
  if (tape.consumed()) throw TapeError("tape reused after backward consumed it");
  if (!tape.has_loss()) throw TapeError("backward needs a scalar loss; call attach_loss first");
  TapeAccess::consumed(tape) = true;

  const Model& model = TapeAccess::model(tape);
  const ParameterSet& params = TapeAccess::params(tape);
  GradientSet grads = GradientSet::zeros_like(params);

  // dL/d(output) for the (possibly scaled) scalar loss.
  const double upstream = seed * tape.loss_scale();
  Tensor dy = std::move(*TapeAccess::loss_grad(tape));
  TapeAccess::loss_grad(tape).reset();
  for (double& v : dy.data()) v *= upstream;

  auto& records = TapeAccess::records(tape);
  for (std::size_t r = records.size(); r-- > 0;) {
    LayerRecord& rec = records[r];
    const std::size_t k = rec.layer;
    const LayerSpec& layer = model.spec().layers[k];
    const Tensor& x = rec.input;
    Tensor dx(x.shape(), 0.0);

    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      const std::size_t n = x.dim(0);
      const Tensor& w = params.at(Model::param_name(k, "weight"));
      Tensor& dw = grads.at(Model::param_name(k, "weight"));
      for (std::size_t o = 0; o < d->out; ++o)
        for (std::size_t i = 0; i < d->in; ++i) {
          double acc = 0.0;
          for (std::size_t b = 0; b < n; ++b) acc += dy[b * d->out + o] * x[b * d->in + i];
          dw[o * d->in + i] = acc;
        }
      if (d->bias) {
        Tensor& db = grads.at(Model::param_name(k, "bias"));
        for (std::size_t o = 0; o < d->out; ++o) {
          double acc = 0.0;
          for (std::size_t b = 0; b < n; ++b) acc += dy[b * d->out + o];
          db[o] = acc;
        }
      }
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < d->in; ++i) {
          double acc = 0.0;
          for (std::size_t o = 0; o < d->out; ++o) acc += dy[b * d->out + o] * w[o * d->in + i];
          dx[b * d->in + i] = acc;
        }
    } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
      const ConvGeometry g = conv_geometry(*c, x, model.shape_at(k + 1));
      const Tensor& w = params.at(Model::param_name(k, "weight"));
      Tensor& dw = grads.at(Model::param_name(k, "weight"));
      Tensor& db = grads.at(Model::param_name(k, "bias"));
      for (std::size_t bn = 0; bn < g.n; ++bn)
        for (std::size_t oc = 0; oc < g.o; ++oc)
          for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const double go = dy[g.output_index(bn, oc, oy, ox)];
              db[oc] += go;
              for (std::size_t ch = 0; ch < g.c; ++ch)
                for (std::size_t ky = 0; ky < g.k; ++ky)
                  for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const std::size_t ii = g.input_index(bn, ch, oy, ox, ky, kx);
                    if (ii == kNoIndex) continue;
                    const std::size_t wi = g.weight_index(oc, ch, ky, kx);
                    dw[wi] += go * x[ii];
                    dx[ii] += go * w[wi];
                  }
            }
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    } else if (std::holds_alternative<BatchNormSpec>(layer)) {
      const BatchNormCache& cache = *rec.batchnorm;
      const FeatureLayout L = feature_layout(x);
      const Tensor& gamma = params.at(Model::param_name(k, "gamma"));
      Tensor& dgamma = grads.at(Model::param_name(k, "gamma"));
      Tensor& dbeta = grads.at(Model::param_name(k, "beta"));
      const double m = static_cast<double>(L.batch * L.spatial);
      for (std::size_t f = 0; f < L.features; ++f) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < L.batch; ++b)
          for (std::size_t s = 0; s < L.spatial; ++s) {
            const std::size_t i = L.index(b, f, s);
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * cache.normalized[i];
          }
        dgamma[f] = sum_dy_xhat;
        dbeta[f] = sum_dy;
        const double scale = gamma[f] * cache.inv_std[f];
        for (std::size_t b = 0; b < L.batch; ++b)
          for (std::size_t s = 0; s < L.spatial; ++s) {
            const std::size_t i = L.index(b, f, s);
            if (cache.mode == Mode::eval) {
              dx[i] = scale * dy[i];
            } else {
              dx[i] = scale * (dy[i] - sum_dy / m - cache.normalized[i] * sum_dy_xhat / m);
            }
          }
      }
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      dx = dy.reshaped(x.shape());
    } else if (std::holds_alternative<MaxPool2dSpec>(layer)) {
      for (std::size_t o = 0; o < rec.argmax.size(); ++o) dx[rec.argmax[o]] += dy[o];
    }
    dy = std::move(dx);
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value.grad_required()) grads[i].value.fill(0.0);
  }
  return grads;
}

LossFn make_loss_fn(const LossSpec& spec) {
  return [spec](const Tensor& output, const Tensor& target) { return mean_loss(spec, output, target).value; };
}

GradientSet finite_difference_gradients(const Model& model, ParameterSet& params, const LossFn& loss_fn,
                                        const Batch& batch, double eps, Mode mode) {
  if (!(eps > 0.0)) throw ArgumentError("finite difference step must be positive");
  GradientSet grads = GradientSet::zeros_like(params);
  auto evaluate = [&]() {
    Model scratch = model;
    return loss_fn(forward(scratch, params, batch.inputs, mode).output, batch.targets);
  };
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t].value;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double plus = evaluate();
      p[i] = saved - eps;
      const double minus = evaluate();
      p[i] = saved;
      grads[t].value[i] = (plus - minus) / (2.0 * eps);
    }
  }
  return grads;
}

}  // namespace mbs
