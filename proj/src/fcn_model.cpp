#include "techdet/fcn_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "techdet/error.hpp"

namespace techdet {
namespace {

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

constexpr double kProbFloor = 1e-12;
constexpr std::size_t kNumBlocks = 3;  // conv blocks followed by 2x2 pooling

// Indices into parameter_layout().
constexpr std::size_t kConvWeight[4] = {0, 2, 4, 6};
constexpr std::size_t kConvBias[4] = {1, 3, 5, 7};
constexpr std::size_t kUpWeight = 8;
constexpr std::size_t kUpBias = 9;
constexpr std::size_t kHeadWeight = 10;
constexpr std::size_t kHeadBias = 11;

// Feature maps are channels x (height * width), row-major within a plane.
struct Plane {
  std::size_t h = 0;
  std::size_t w = 0;
};

void im2col3x3(const Matrix& in, Plane p, Matrix& col) {
  const auto cin = static_cast<std::size_t>(in.rows());
  col.resize(static_cast<Eigen::Index>(cin * 9),
             static_cast<Eigen::Index>(p.h * p.w));
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const double* src = in.row(static_cast<Eigen::Index>(ci)).data();
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* dst =
            col.row(static_cast<Eigen::Index>(ci * 9 + ky * 3 + kx)).data();
        for (std::size_t y = 0; y < p.h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          double* row = dst + y * p.w;
          if (sy < 0 || sy >= static_cast<long>(p.h)) {
            std::fill(row, row + p.w, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(sy) * p.w;
          for (std::size_t x = 0; x < p.w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            row[x] = (sx < 0 || sx >= static_cast<long>(p.w))
                         ? 0.0
                         : srow[static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

void col2im3x3(const Matrix& col, std::size_t cin, Plane p, Matrix& out) {
  out.setZero(static_cast<Eigen::Index>(cin),
              static_cast<Eigen::Index>(p.h * p.w));
  for (std::size_t ci = 0; ci < cin; ++ci) {
    double* dst = out.row(static_cast<Eigen::Index>(ci)).data();
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* src =
            col.row(static_cast<Eigen::Index>(ci * 9 + ky * 3 + kx)).data();
        for (std::size_t y = 0; y < p.h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(p.h)) continue;
          const double* row = src + y * p.w;
          double* drow = dst + static_cast<std::size_t>(sy) * p.w;
          for (std::size_t x = 0; x < p.w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            if (sx >= 0 && sx < static_cast<long>(p.w))
              drow[static_cast<std::size_t>(sx)] += row[x];
          }
        }
      }
    }
  }
}

// 2x2 max pooling; ties resolve to the first candidate in row-major order.
void maxpool2x2(const Matrix& in, Plane p, Matrix& out,
                std::vector<std::uint32_t>& argmax) {
  const Plane o{p.h / 2, p.w / 2};
  const auto channels = static_cast<std::size_t>(in.rows());
  out.resize(in.rows(), static_cast<Eigen::Index>(o.h * o.w));
  argmax.resize(channels * o.h * o.w);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = in.row(static_cast<Eigen::Index>(c)).data();
    double* dst = out.row(static_cast<Eigen::Index>(c)).data();
    std::uint32_t* idx = argmax.data() + c * o.h * o.w;
    for (std::size_t y = 0; y < o.h; ++y) {
      for (std::size_t x = 0; x < o.w; ++x) {
        const std::size_t base = 2 * y * p.w + 2 * x;
        const std::size_t candidates[4] = {base, base + 1, base + p.w,
                                           base + p.w + 1};
        std::size_t best = candidates[0];
        for (std::size_t k = 1; k < 4; ++k)
          if (src[candidates[k]] > src[best]) best = candidates[k];
        dst[y * o.w + x] = src[best];
        idx[y * o.w + x] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

// Max over all rows of each channel plane, leaving channels x width.
void maxpool_height(const Matrix& in, Plane p, Matrix& out,
                    std::vector<std::uint32_t>& argmax) {
  const auto channels = static_cast<std::size_t>(in.rows());
  out.resize(in.rows(), static_cast<Eigen::Index>(p.w));
  argmax.resize(channels * p.w);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = in.row(static_cast<Eigen::Index>(c)).data();
    for (std::size_t x = 0; x < p.w; ++x) {
      std::size_t best = x;
      for (std::size_t y = 1; y < p.h; ++y)
        if (src[y * p.w + x] > src[best]) best = y * p.w + x;
      out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(x)) = src[best];
      argmax[c * p.w + x] = static_cast<std::uint32_t>(best);
    }
  }
}

void scatter_max(const Matrix& grad_out, const std::vector<std::uint32_t>& argmax,
                 std::size_t in_size, Matrix& grad_in) {
  grad_in.setZero(grad_out.rows(), static_cast<Eigen::Index>(in_size));
  const auto out_size = static_cast<std::size_t>(grad_out.cols());
  for (Eigen::Index c = 0; c < grad_out.rows(); ++c) {
    const std::uint32_t* idx = argmax.data() + static_cast<std::size_t>(c) * out_size;
    for (std::size_t i = 0; i < out_size; ++i)
      grad_in(c, idx[i]) += grad_out(c, static_cast<Eigen::Index>(i));
  }
}

struct Trace {
  std::array<Plane, 4> planes;         // spatial size at each conv
  std::array<Matrix, 4> cols;          // im2col inputs
  std::array<Matrix, 4> activations;   // post-ReLU conv outputs
  std::array<std::vector<std::uint32_t>, kNumBlocks> pool_argmax;
  std::vector<std::uint32_t> height_argmax;
  Matrix pooled;     // channels x pooled frames (upsampler input)
  Matrix upsampled;  // channels x n_frames
  Matrix probs;      // k x n_frames
};

void run_forward(const FcnParameters& params, const std::vector<TensorSpec>& layout,
                 const Matrix& input, Trace& t) {
  const FcnConfig& cfg = params.config;
  Matrix x = Eigen::Map<const Matrix>(input.data(), 1, input.size());
  Plane plane{cfg.n_mels, cfg.n_frames};
  for (std::size_t i = 0; i < 4; ++i) {
    const TensorSpec& ws = layout[kConvWeight[i]];
    const ConstMatrixMap weight(params.values.data() + ws.offset,
                                static_cast<Eigen::Index>(ws.shape[0]),
                                static_cast<Eigen::Index>(ws.size / ws.shape[0]));
    const ConstVectorMap bias(params.values.data() + layout[kConvBias[i]].offset,
                              static_cast<Eigen::Index>(ws.shape[0]));
    t.planes[i] = plane;
    im2col3x3(x, plane, t.cols[i]);
    Matrix& a = t.activations[i];
    a.noalias() = weight * t.cols[i];
    a.colwise() += bias;
    a = a.cwiseMax(0.0);
    if (i < kNumBlocks) {
      maxpool2x2(a, plane, x, t.pool_argmax[i]);
      plane = {plane.h / 2, plane.w / 2};
    }
  }
  maxpool_height(t.activations[3], plane, t.pooled, t.height_argmax);

  const TensorSpec& us = layout[kUpWeight];
  const std::size_t c_in = us.shape[0], c_out = us.shape[1], kernel = us.shape[2];
  const std::size_t stride = cfg.upsample_stride;
  const ConstMatrixMap up_weight(params.values.data() + us.offset,
                                 static_cast<Eigen::Index>(c_in),
                                 static_cast<Eigen::Index>(c_out * kernel));
  const Matrix spread = up_weight.transpose() * t.pooled;  // (out*kernel) x T
  const std::size_t steps = static_cast<std::size_t>(t.pooled.cols());
  t.upsampled.resize(static_cast<Eigen::Index>(c_out),
                     static_cast<Eigen::Index>((steps - 1) * stride + kernel));
  for (std::size_t co = 0; co < c_out; ++co)
    t.upsampled.row(static_cast<Eigen::Index>(co))
        .setConstant(params.values[layout[kUpBias].offset + co]);
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t step = 0; step < steps; ++step)
      for (std::size_t j = 0; j < kernel; ++j)
        t.upsampled(static_cast<Eigen::Index>(co),
                    static_cast<Eigen::Index>(step * stride + j)) +=
            spread(static_cast<Eigen::Index>(co * kernel + j),
                   static_cast<Eigen::Index>(step));

  const TensorSpec& hs = layout[kHeadWeight];
  const ConstMatrixMap head(params.values.data() + hs.offset,
                            static_cast<Eigen::Index>(hs.shape[0]),
                            static_cast<Eigen::Index>(hs.shape[1]));
  const ConstVectorMap head_bias(params.values.data() + layout[kHeadBias].offset,
                                 static_cast<Eigen::Index>(hs.shape[0]));
  t.probs.noalias() = head * t.upsampled;
  t.probs.colwise() += head_bias;
  if (!t.probs.allFinite())
    throw NumericalError("non-finite activations in forward pass");
  for (Eigen::Index f = 0; f < t.probs.cols(); ++f) {
    auto column = t.probs.col(f);
    column.array() -= column.maxCoeff();
    column = column.array().exp().matrix();
    column /= column.sum();
  }
}

double frame_loss(const Matrix& probs, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t f = 0; f < labels.size(); ++f)
    total -= std::log(std::max(
        probs(labels[f], static_cast<Eigen::Index>(f)), kProbFloor));
  return total / static_cast<double>(labels.size());
}

void check_labels(std::span<const int> labels, std::size_t n_frames,
                  std::size_t n_classes) {
  if (labels.size() != n_frames)
    throw InputError("label count " + std::to_string(labels.size()) +
                     " does not match " + std::to_string(n_frames) + " frames");
  for (const int label : labels)
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes)
      throw InputError("label " + std::to_string(label) + " out of range");
}

void check_input(const FcnConfig& cfg, const MelSpectrogram& input) {
  if (input.n_mels() != cfg.n_mels || input.n_frames() != cfg.n_frames)
    throw InputError("input is " + std::to_string(input.n_mels()) + "x" +
                     std::to_string(input.n_frames()) + ", model expects " +
                     std::to_string(cfg.n_mels) + "x" +
                     std::to_string(cfg.n_frames));
}

// Gradient of one example's mean frame loss, accumulated into `grad`.
double backward_one(const FcnParameters& params, const std::vector<TensorSpec>& layout,
                    const Example& example, std::vector<double>& grad) {
  const FcnConfig& cfg = params.config;
  check_input(cfg, example.features);
  check_labels(example.labels, cfg.n_frames, cfg.n_classes);
  Trace t;
  run_forward(params, layout, example.features.values, t);
  const double example_loss = frame_loss(t.probs, example.labels);

  const auto n_frames = static_cast<Eigen::Index>(cfg.n_frames);
  Matrix d_logits = t.probs;
  for (Eigen::Index f = 0; f < n_frames; ++f) {
    const int y = example.labels[static_cast<std::size_t>(f)];
    if (t.probs(y, f) < kProbFloor)
      d_logits.col(f).setZero();  // floored term is constant
    else
      d_logits(y, f) -= 1.0;
  }
  d_logits /= static_cast<double>(n_frames);

  // Head.
  const TensorSpec& hs = layout[kHeadWeight];
  const ConstMatrixMap head(params.values.data() + hs.offset,
                            static_cast<Eigen::Index>(hs.shape[0]),
                            static_cast<Eigen::Index>(hs.shape[1]));
  MatrixMap(grad.data() + hs.offset, head.rows(), head.cols()).noalias() +=
      d_logits * t.upsampled.transpose();
  VectorMap(grad.data() + layout[kHeadBias].offset, head.rows()) +=
      d_logits.rowwise().sum();
  const Matrix d_up = head.transpose() * d_logits;

  // Transposed convolution along time.
  const TensorSpec& us = layout[kUpWeight];
  const std::size_t c_in = us.shape[0], c_out = us.shape[1], kernel = us.shape[2];
  const std::size_t stride = cfg.upsample_stride;
  const auto steps = static_cast<std::size_t>(t.pooled.cols());
  Matrix d_spread(static_cast<Eigen::Index>(c_out * kernel),
                  static_cast<Eigen::Index>(steps));
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t step = 0; step < steps; ++step)
      for (std::size_t j = 0; j < kernel; ++j)
        d_spread(static_cast<Eigen::Index>(co * kernel + j),
                 static_cast<Eigen::Index>(step)) =
            d_up(static_cast<Eigen::Index>(co),
                 static_cast<Eigen::Index>(step * stride + j));
  VectorMap(grad.data() + layout[kUpBias].offset, static_cast<Eigen::Index>(c_out)) +=
      d_up.rowwise().sum();
  const ConstMatrixMap up_weight(params.values.data() + us.offset,
                                 static_cast<Eigen::Index>(c_in),
                                 static_cast<Eigen::Index>(c_out * kernel));
  MatrixMap(grad.data() + us.offset, up_weight.rows(), up_weight.cols()).noalias() +=
      t.pooled * d_spread.transpose();
  const Matrix d_pooled = up_weight * d_spread;

  // Height pooling, then the conv stack in reverse.
  Matrix d_act;
  scatter_max(d_pooled, t.height_argmax,
              static_cast<std::size_t>(t.activations[3].cols()), d_act);
  Matrix d_col, d_in;
  for (std::size_t i = 4; i-- > 0;) {
    d_act = (t.activations[i].array() > 0.0).select(d_act, 0.0);
    const TensorSpec& ws = layout[kConvWeight[i]];
    const Eigen::Index c_outs = static_cast<Eigen::Index>(ws.shape[0]);
    const Eigen::Index fan = static_cast<Eigen::Index>(ws.size / ws.shape[0]);
    MatrixMap(grad.data() + ws.offset, c_outs, fan).noalias() +=
        d_act * t.cols[i].transpose();
    VectorMap(grad.data() + layout[kConvBias[i]].offset, c_outs) +=
        d_act.rowwise().sum();
    if (i == 0) break;
    const ConstMatrixMap weight(params.values.data() + ws.offset, c_outs, fan);
    d_col.noalias() = weight.transpose() * d_act;
    col2im3x3(d_col, ws.shape[1], t.planes[i], d_in);
    const Plane prev = t.planes[i - 1];
    scatter_max(d_in, t.pool_argmax[i - 1], prev.h * prev.w, d_act);
  }
  return example_loss;
}

}  // namespace

void FcnConfig::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  for (const auto w : widths)
    if (w < 1) throw ConfigError("channel widths must be at least 1");
  if (n_mels < 8 || n_mels % 8 != 0)
    throw ConfigError("n_mels must be a positive multiple of 8");
  if (n_frames < 8 || n_frames % 8 != 0)
    throw ConfigError("n_frames must be a positive multiple of 8");
  if (upsample_kernel < 1 || upsample_stride < 1)
    throw ConfigError("upsampler kernel and stride must be at least 1");
  if (upsampled_frames() != n_frames)
    throw ConfigError("upsampler (kernel " + std::to_string(upsample_kernel) +
                      ", stride " + std::to_string(upsample_stride) + ") maps " +
                      std::to_string(pooled_frames()) + " steps to " +
                      std::to_string(upsampled_frames()) +
                      " frames, expected " + std::to_string(n_frames));
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be finite and non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
}

nlohmann::json FcnConfig::to_json() const {
  return {{"n_classes", n_classes},
          {"widths", widths},
          {"n_mels", n_mels},
          {"n_frames", n_frames},
          {"upsample_kernel", upsample_kernel},
          {"upsample_stride", upsample_stride},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed}};
}

FcnConfig FcnConfig::from_json(const nlohmann::json& j) {
  FcnConfig c;
  try {
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.widths = j.at("widths").get<std::array<std::size_t, 4>>();
    c.n_mels = j.at("n_mels").get<std::size_t>();
    c.n_frames = j.at("n_frames").get<std::size_t>();
    c.upsample_kernel = j.at("upsample_kernel").get<std::size_t>();
    c.upsample_stride = j.at("upsample_stride").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::optional<std::pair<std::size_t, std::size_t>> published_upsampler(
    std::size_t n_classes) {
  switch (n_classes) {
    case 4: return std::pair<std::size_t, std::size_t>{3, 1};
    case 7: return std::pair<std::size_t, std::size_t>{3, 2};
    case 11: return std::pair<std::size_t, std::size_t>{4, 3};
    default: return std::nullopt;
  }
}

std::vector<TensorSpec> parameter_layout(const FcnConfig& config) {
  config.validate();
  std::vector<TensorSpec> layout;
  std::size_t offset = 0;
  const auto add = [&](std::string name, std::vector<std::size_t> shape,
                       std::size_t fan_in) {
    std::size_t size = 1;
    for (const auto d : shape) size *= d;
    layout.push_back({std::move(name), std::move(shape), offset, size, fan_in});
    offset += size;
  };
  std::size_t in = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t out = config.widths[i];
    const std::string prefix = "conv" + std::to_string(i + 1);
    add(prefix + ".weight", {out, in, 3, 3}, in * 9);
    add(prefix + ".bias", {out}, 0);
    in = out;
  }
  // Each upsampled frame receives ceil(kernel / stride) taps per input
  // channel.
  const std::size_t taps =
      (config.upsample_kernel + config.upsample_stride - 1) / config.upsample_stride;
  add("upsample.weight", {in, in, config.upsample_kernel}, in * taps);
  add("upsample.bias", {in}, 0);
  add("head.weight", {config.n_classes, in}, in);
  add("head.bias", {config.n_classes}, 0);
  return layout;
}

FcnParameters init_params(const FcnConfig& config, std::uint64_t seed) {
  const auto layout = parameter_layout(config);
  FcnParameters params;
  params.config = config;
  params.values.assign(layout.back().offset + layout.back().size, 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& spec : layout) {
    if (spec.is_bias()) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : params.tensor(spec)) v = dist(rng);
  }
  return params;
}

FramePrediction forward(const FcnParameters& params, const MelSpectrogram& input) {
  const auto layout = parameter_layout(params.config);
  if (params.values.size() != layout.back().offset + layout.back().size)
    throw ConfigError("parameter count does not match the model config");
  check_input(params.config, input);
  Trace t;
  run_forward(params, layout, input.values, t);
  return {std::move(t.probs)};
}

double loss(const FramePrediction& pred, std::span<const int> labels) {
  check_labels(labels, pred.n_frames(), pred.n_classes());
  if (labels.empty()) throw InputError("loss over zero frames");
  return frame_loss(pred.probs, labels);
}

GradientResult gradients(const FcnParameters& params,
                         std::span<const Example* const> batch, unsigned threads) {
  if (batch.empty()) throw InputError("gradient of an empty batch");
  const auto layout = parameter_layout(params.config);
  const std::size_t n_params = layout.back().offset + layout.back().size;
  if (params.values.size() != n_params)
    throw ConfigError("parameter count does not match the model config");

  std::vector<std::vector<double>> per_example(batch.size(),
                                               std::vector<double>(n_params, 0.0));
  std::vector<double> losses(batch.size(), 0.0);
  const auto work = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < batch.size(); i += step)
      losses[i] = backward_one(params, layout, *batch[i], per_example[i]);
  };
  const std::size_t workers =
      std::min<std::size_t>(std::max(threads, 1u), batch.size());
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  GradientResult result{std::vector<double>(n_params, 0.0), 0.0};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t p = 0; p < n_params; ++p) result.gradient[p] += per_example[i][p];
    result.loss += losses[i];
  }
  const double n = static_cast<double>(batch.size());
  for (double& g : result.gradient) g /= n;
  result.loss /= n;
  return result;
}

GradientResult gradients(const FcnParameters& params, std::span<const Example> batch,
                         unsigned threads) {
  std::vector<const Example*> pointers;
  pointers.reserve(batch.size());
  for (const auto& e : batch) pointers.push_back(&e);
  return gradients(params, std::span<const Example* const>(pointers), threads);
}

}  // namespace techdet
