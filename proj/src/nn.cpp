#include "sgmcmc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sgmcmc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr int kKernel = 3;  // conv kernels are fixed 3x3, stride 1, same padding

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw ContractError(std::string(what) + " contains non-finite values");
}

}  // namespace

void ArchitectureConfig::validate() const {
  if (num_outputs <= 0) throw ConfigError("num_outputs must be positive");
  if (input_shape.empty()) throw ConfigError("input_shape must be set");
  for (int d : input_shape)
    if (d <= 0) throw ConfigError("input_shape dims must be positive");
  if (kind == ArchKind::mlp) {
    if (layer_widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
    for (int w : layer_widths)
      if (w <= 0) throw ConfigError("mlp layer widths must be positive");
    if (layer_widths.front() != input_size())
      throw ConfigError("mlp input width does not match input_shape");
    if (layer_widths.back() != num_outputs)
      throw ConfigError("mlp output width does not match num_outputs");
  } else {
    if (input_shape.size() != 3) throw ConfigError("conv input_shape must be {C,H,W}");
    if (channels <= 0) throw ConfigError("conv channels must be positive");
    if (conv_depth <= 0) throw ConfigError("conv_depth must be positive");
  }
}

int ArchitectureConfig::input_size() const {
  int n = 1;
  for (int d : input_shape) n *= d;
  return n;
}

std::string ArchitectureConfig::describe() const {
  std::ostringstream os;
  if (kind == ArchKind::mlp) {
    os << "mlp[";
    for (std::size_t i = 0; i < layer_widths.size(); ++i)
      os << (i ? "," : "") << layer_widths[i];
    os << "]";
  } else {
    os << "conv[c=" << channels << ",depth=" << conv_depth
       << (residual ? ",res" : "") << "]";
  }
  os << (activation == Activation::relu ? ",relu" : ",identity");
  return os.str();
}

std::vector<TensorSlot> build_layout(const ArchitectureConfig& arch) {
  arch.validate();
  std::vector<TensorSlot> layout;
  int offset = 0;
  auto add = [&](const std::string& name, std::vector<int> shape) {
    int size = 1;
    for (int d : shape) size *= d;
    layout.push_back({name, std::move(shape), offset, size});
    offset += size;
  };
  if (arch.kind == ArchKind::mlp) {
    for (std::size_t l = 0; l + 1 < arch.layer_widths.size(); ++l) {
      const std::string tag = "dense" + std::to_string(l);
      add(tag + ".w", {arch.layer_widths[l + 1], arch.layer_widths[l]});
      add(tag + ".b", {arch.layer_widths[l + 1]});
    }
  } else {
    int in_ch = arch.input_shape[0];
    for (int l = 0; l < arch.conv_depth; ++l) {
      const std::string tag = "conv" + std::to_string(l);
      add(tag + ".w", {arch.channels, in_ch, kKernel, kKernel});
      add(tag + ".b", {arch.channels});
      in_ch = arch.channels;
    }
    add("readout.w", {arch.num_outputs, arch.channels});
    add("readout.b", {arch.num_outputs});
  }
  return layout;
}

int param_count(const ArchitectureConfig& arch) {
  int total = 0;
  for (const auto& slot : build_layout(arch)) total += slot.size;
  return total;
}

ParamVector init_params(const ArchitectureConfig& arch, std::uint64_t seed) {
  ParamVector theta;
  theta.layout = build_layout(arch);
  int total = 0;
  for (const auto& s : theta.layout) total += s.size;
  theta.values = Eigen::VectorXd::Zero(total);

  RngStream rng(derive_seed(seed, 0x696e6974ull));  // "init"
  for (const auto& slot : theta.layout) {
    if (slot.name.ends_with(".b")) continue;  // biases stay zero
    // fan_in = product of all shape dims except the leading output dim
    int fan_in = 1;
    for (std::size_t i = 1; i < slot.shape.size(); ++i) fan_in *= slot.shape[i];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int i = 0; i < slot.size; ++i)
      theta.values[slot.offset + i] = std_dev * rng.normal();
  }
  return theta;
}

namespace {

// One forward/backward evaluation over the fixed operator set. Activations
// are cached per layer so the backward pass can replay the tape.
struct Evaluator {
  const ArchitectureConfig& arch;
  const Eigen::VectorXd& theta;
  const std::vector<TensorSlot>& layout;
  const DataBatch& batch;

  RowMat outputs;                 // batch x num_outputs
  std::vector<RowMat> acts;       // post-activation per stage, acts[0] = input
  std::vector<RowMat> pre_acts;   // pre-activation per hidden stage

  Evaluator(const ArchitectureConfig& a, const Eigen::VectorXd& t,
            const std::vector<TensorSlot>& lay, const DataBatch& b)
      : arch(a), theta(t), layout(lay), batch(b) {}

  const TensorSlot& slot(const std::string& name) const {
    for (const auto& s : layout)
      if (s.name == name) return s;
    throw ContractError("missing tensor slot " + name);
  }
  ConstMap weight(const TensorSlot& s, int rows, int cols) const {
    return ConstMap(theta.data() + s.offset, rows, cols);
  }

  void run_forward() {
    acts.clear();
    pre_acts.clear();
    acts.emplace_back(batch.inputs);
    if (arch.kind == ArchKind::mlp)
      forward_mlp();
    else
      forward_conv();
  }

  void forward_mlp() {
    const int num_layers = static_cast<int>(arch.layer_widths.size()) - 1;
    for (int l = 0; l < num_layers; ++l) {
      const auto& ws = slot("dense" + std::to_string(l) + ".w");
      const auto& bs = slot("dense" + std::to_string(l) + ".b");
      const int out = arch.layer_widths[l + 1];
      const int in = arch.layer_widths[l];
      RowMat z = acts.back() * weight(ws, out, in).transpose();
      z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(theta.data() + bs.offset, out);
      if (l + 1 < num_layers) {
        pre_acts.push_back(z);
        acts.push_back(arch.activation == Activation::relu ? z.cwiseMax(0.0) : z);
      } else {
        outputs = std::move(z);
      }
    }
  }

  void forward_conv() {
    const int h = arch.input_shape[1], w = arch.input_shape[2];
    const int n = batch.size();
    int in_ch = arch.input_shape[0];
    for (int l = 0; l < arch.conv_depth; ++l) {
      const std::string tag = "conv" + std::to_string(l);
      const auto& ws = slot(tag + ".w");
      const auto& bs = slot(tag + ".b");
      const double* wp = theta.data() + ws.offset;
      const double* bp = theta.data() + bs.offset;
      const int out_ch = arch.channels;
      const bool skip = arch.residual && in_ch == out_ch;
      RowMat z(n, out_ch * h * w);
      for (int s = 0; s < n; ++s) {
        const double* in = acts.back().data() + static_cast<std::ptrdiff_t>(s) * in_ch * h * w;
        double* out = z.data() + static_cast<std::ptrdiff_t>(s) * out_ch * h * w;
        conv2d(in, in_ch, wp, bp, out, out_ch, h, w);
        if (skip)
          for (int i = 0; i < out_ch * h * w; ++i) out[i] += in[i];
      }
      pre_acts.push_back(z);
      acts.push_back(arch.activation == Activation::relu ? z.cwiseMax(0.0) : z);
      in_ch = out_ch;
    }
    // global average pooling
    RowMat pooled(n, arch.channels);
    const int area = h * w;
    for (int s = 0; s < n; ++s)
      for (int c = 0; c < arch.channels; ++c)
        pooled(s, c) =
            acts.back().row(s).segment(c * area, area).mean();
    acts.push_back(std::move(pooled));
    const auto& ws = slot("readout.w");
    const auto& bs = slot("readout.b");
    outputs = acts.back() * weight(ws, arch.num_outputs, arch.channels).transpose();
    outputs.rowwise() +=
        Eigen::Map<const Eigen::RowVectorXd>(theta.data() + bs.offset, arch.num_outputs);
  }

  static void conv2d(const double* in, int in_ch, const double* w, const double* b,
                     double* out, int out_ch, int h, int wd) {
    for (int k = 0; k < out_ch; ++k) {
      double* okp = out + k * h * wd;
      for (int i = 0; i < h * wd; ++i) okp[i] = b[k];
      for (int c = 0; c < in_ch; ++c) {
        const double* icp = in + c * h * wd;
        const double* wk = w + (k * in_ch + c) * kKernel * kKernel;
        for (int dy = 0; dy < kKernel; ++dy) {
          for (int dx = 0; dx < kKernel; ++dx) {
            const double wv = wk[dy * kKernel + dx];
            if (wv == 0.0) continue;
            const int y0 = std::max(0, 1 - dy), y1 = std::min(h, h + 1 - dy);
            const int x0 = std::max(0, 1 - dx), x1 = std::min(wd, wd + 1 - dx);
            for (int y = y0; y < y1; ++y) {
              const double* src = icp + (y + dy - 1) * wd + (x0 + dx - 1);
              double* dst = okp + y * wd + x0;
              for (int x = x0; x < x1; ++x) *dst++ += wv * *src++;
            }
          }
        }
      }
    }
  }

  // Transposed pass of conv2d: scatter dOut into dIn, dW, dB.
  static void conv2d_backward(const double* in, int in_ch, const double* w,
                              const double* d_out, int out_ch, int h, int wd,
                              double* d_in, double* d_w, double* d_b) {
    for (int k = 0; k < out_ch; ++k) {
      const double* dkp = d_out + k * h * wd;
      for (int i = 0; i < h * wd; ++i) d_b[k] += dkp[i];
      for (int c = 0; c < in_ch; ++c) {
        const double* icp = in + c * h * wd;
        double* dip = d_in + c * h * wd;
        const double* wk = w + (k * in_ch + c) * kKernel * kKernel;
        double* dwk = d_w + (k * in_ch + c) * kKernel * kKernel;
        for (int dy = 0; dy < kKernel; ++dy) {
          for (int dx = 0; dx < kKernel; ++dx) {
            const double wv = wk[dy * kKernel + dx];
            double acc = 0.0;
            const int y0 = std::max(0, 1 - dy), y1 = std::min(h, h + 1 - dy);
            const int x0 = std::max(0, 1 - dx), x1 = std::min(wd, wd + 1 - dx);
            for (int y = y0; y < y1; ++y) {
              const double* gsrc = dkp + y * wd + x0;
              const double* isrc = icp + (y + dy - 1) * wd + (x0 + dx - 1);
              double* idst = dip + (y + dy - 1) * wd + (x0 + dx - 1);
              for (int x = x0; x < x1; ++x) {
                acc += *gsrc * *isrc++;
                *idst++ += wv * *gsrc++;
              }
            }
            dwk[dy * kKernel + dx] += acc;
          }
        }
      }
    }
  }

  // Backprop d(total nll)/d(outputs) into parameter space.
  void run_backward(const RowMat& d_out, Eigen::VectorXd& grad) const {
    if (arch.kind == ArchKind::mlp)
      backward_mlp(d_out, grad);
    else
      backward_conv(d_out, grad);
  }

  void backward_mlp(RowMat g, Eigen::VectorXd& grad) const {
    const int num_layers = static_cast<int>(arch.layer_widths.size()) - 1;
    for (int l = num_layers - 1; l >= 0; --l) {
      const auto& ws = slot("dense" + std::to_string(l) + ".w");
      const auto& bs = slot("dense" + std::to_string(l) + ".b");
      const int out = arch.layer_widths[l + 1];
      const int in = arch.layer_widths[l];
      MutMap dW(grad.data() + ws.offset, out, in);
      dW.noalias() += g.transpose() * acts[l];
      Eigen::Map<Eigen::RowVectorXd>(grad.data() + bs.offset, out) += g.colwise().sum();
      if (l > 0) {
        RowMat gh = g * weight(ws, out, in);
        if (arch.activation == Activation::relu)
          gh = gh.cwiseProduct((pre_acts[l - 1].array() > 0.0).cast<double>().matrix());
        g = std::move(gh);
      }
    }
  }

  void backward_conv(const RowMat& d_logits, Eigen::VectorXd& grad) const {
    const int h = arch.input_shape[1], w = arch.input_shape[2];
    const int n = batch.size();
    const int area = h * w;
    const auto& rw = slot("readout.w");
    const auto& rb = slot("readout.b");
    MutMap dWr(grad.data() + rw.offset, arch.num_outputs, arch.channels);
    dWr.noalias() += d_logits.transpose() * acts.back();
    Eigen::Map<Eigen::RowVectorXd>(grad.data() + rb.offset, arch.num_outputs) +=
        d_logits.colwise().sum();
    RowMat d_pool = d_logits * weight(rw, arch.num_outputs, arch.channels);

    // undo the pooling: every pixel gets an equal share
    RowMat d_act(n, arch.channels * area);
    for (int s = 0; s < n; ++s)
      for (int c = 0; c < arch.channels; ++c)
        d_act.row(s).segment(c * area, area).setConstant(d_pool(s, c) / area);

    for (int l = arch.conv_depth - 1; l >= 0; --l) {
      const int in_ch = (l == 0) ? arch.input_shape[0] : arch.channels;
      const int out_ch = arch.channels;
      const bool skip = arch.residual && in_ch == out_ch;
      if (arch.activation == Activation::relu)
        d_act = d_act.cwiseProduct((pre_acts[l].array() > 0.0).cast<double>().matrix());
      const std::string tag = "conv" + std::to_string(l);
      const auto& ws = slot(tag + ".w");
      const auto& bs = slot(tag + ".b");
      RowMat d_in = RowMat::Zero(n, in_ch * area);
      for (int s = 0; s < n; ++s) {
        conv2d_backward(acts[l].data() + static_cast<std::ptrdiff_t>(s) * in_ch * area, in_ch,
                        theta.data() + ws.offset,
                        d_act.data() + static_cast<std::ptrdiff_t>(s) * out_ch * area, out_ch,
                        h, w, d_in.data() + static_cast<std::ptrdiff_t>(s) * in_ch * area,
                        grad.data() + ws.offset, grad.data() + bs.offset);
        if (skip)
          d_in.row(s) += d_act.row(s);
      }
      d_act = std::move(d_in);
    }
  }
};

void validate_batch(const ArchitectureConfig& arch, const DataBatch& batch) {
  if (batch.size() == 0) throw ContractError("empty batch");
  if (batch.inputs.cols() != arch.input_size())
    throw ContractError("batch input width " + std::to_string(batch.inputs.cols()) +
                        " does not match architecture input size " +
                        std::to_string(arch.input_size()));
  check_finite(batch.inputs, "batch inputs");
  if (batch.classification) {
    if (batch.labels.size() != batch.size()) throw ContractError("labels/batch size mismatch");
    for (int i = 0; i < batch.labels.size(); ++i)
      if (batch.labels[i] < 0 || batch.labels[i] >= arch.num_outputs)
        throw ContractError("label out of range");
  } else {
    if (batch.targets.rows() != batch.size() || batch.targets.cols() != arch.num_outputs)
      throw ContractError("targets/batch shape mismatch");
    check_finite(batch.targets, "batch targets");
  }
}

// Total (summed over the batch) negative log-likelihood and, when d_out is
// non-null, its gradient with respect to the raw outputs.
double batch_nll(const DataBatch& batch, const RowMat& outputs, RowMat* d_out) {
  double total = 0.0;
  if (d_out) d_out->resize(outputs.rows(), outputs.cols());
  if (batch.classification) {
    for (int i = 0; i < outputs.rows(); ++i) {
      const double zmax = outputs.row(i).maxCoeff();
      const double lse = zmax + std::log((outputs.row(i).array() - zmax).exp().sum());
      total += lse - outputs(i, batch.labels[i]);
      if (d_out) {
        d_out->row(i) = (outputs.row(i).array() - lse).exp();
        (*d_out)(i, batch.labels[i]) -= 1.0;
      }
    }
  } else {
    const RowMat r = outputs - RowMat(batch.targets);
    total = 0.5 * r.squaredNorm();
    if (d_out) *d_out = r;
  }
  return total;
}

}  // namespace

Eigen::MatrixXd forward(const EnergyModel& model, const ParamVector& theta,
                        const DataBatch& batch) {
  validate_batch(model.arch, batch);
  if (!theta.values.allFinite()) throw ContractError("theta contains non-finite values");
  Evaluator ev(model.arch, theta.values, theta.layout, batch);
  ev.run_forward();
  return ev.outputs;
}

double energy_value(const EnergyModel& model, const ParamVector& theta,
                    const DataBatch& batch) {
  validate_batch(model.arch, batch);
  if (!theta.values.allFinite()) throw ContractError("theta contains non-finite values");
  Evaluator ev(model.arch, theta.values, theta.layout, batch);
  ev.run_forward();
  const double scale =
      static_cast<double>(batch.dataset_size_n) / static_cast<double>(batch.size());
  const double nll = batch_nll(batch, ev.outputs, nullptr);
  const double prior = model.prior_precision_lambda * theta.values.squaredNorm();
  return (scale * nll + prior) / model.temperature;
}

ParamVector energy_grad(const EnergyModel& model, const ParamVector& theta,
                        const DataBatch& batch) {
  validate_batch(model.arch, batch);
  if (!theta.values.allFinite()) throw ContractError("theta contains non-finite values");
  Evaluator ev(model.arch, theta.values, theta.layout, batch);
  ev.run_forward();
  RowMat d_out;
  batch_nll(batch, ev.outputs, &d_out);

  ParamVector grad;
  grad.layout = theta.layout;
  grad.values = Eigen::VectorXd::Zero(theta.dim());
  ev.run_backward(d_out, grad.values);

  const double scale =
      static_cast<double>(batch.dataset_size_n) / static_cast<double>(batch.size());
  grad.values = (scale * grad.values + 2.0 * model.prior_precision_lambda * theta.values) /
                model.temperature;
  return grad;
}

double finite_diff_check(const EnergyModel& model, const ParamVector& theta,
                         const DataBatch& batch, double epsilon, int max_coords,
                         std::uint64_t seed) {
  if (epsilon < 1e-8 || epsilon > 1e-2)
    throw ContractError("finite_diff_check epsilon out of [1e-8, 1e-2]");
  const ParamVector grad = energy_grad(model, theta, batch);

  std::vector<int> coords;
  const int d = theta.dim();
  if (max_coords > 0 && max_coords < d) {
    RngStream rng(derive_seed(seed, 0xfdccull));
    for (int i = 0; i < max_coords; ++i)
      coords.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(d))));
  } else {
    coords.resize(d);
    for (int i = 0; i < d; ++i) coords[i] = i;
  }

  double max_rel = 0.0;
  ParamVector probe = theta;
  for (int c : coords) {
    const double saved = probe.values[c];
    probe.values[c] = saved + epsilon;
    const double up = energy_value(model, probe, batch);
    probe.values[c] = saved - epsilon;
    const double down = energy_value(model, probe, batch);
    probe.values[c] = saved;
    const double fd = (up - down) / (2.0 * epsilon);
    const double ad = grad.values[c];
    const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1.0});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd probs(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    const double zmax = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - zmax).exp();
    probs.row(i) = (e / e.sum()).matrix();
  }
  return probs;
}

}  // namespace sgmcmc
