#include "zoomdet/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "zoomdet/rng.hpp"

namespace zoomdet::nn {

namespace {

std::int64_t shape_product(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("nn: " + msg); }

}  // namespace

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<std::size_t>(shape_product(shape)), 0.0);
}

int param_tensor_count(const LayerSpec& spec) {
  return std::holds_alternative<ReluSpec>(spec) ? 0 : 2;
}

std::string layer_name(const LayerSpec& spec, int index) {
  const std::string base = "layer " + std::to_string(index);
  if (std::holds_alternative<DenseSpec>(spec)) return base + " (dense)";
  if (std::holds_alternative<Conv2dSpec>(spec)) return base + " (conv2d)";
  return base + " (relu)";
}

std::pair<int, int> conv_output_geometry(int in_h, int in_w, int kh, int kw, int sh,
                                         int sw) {
  if (kh > in_h || kw > in_w)
    fail("conv kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
         " larger than input " + std::to_string(in_h) + "x" + std::to_string(in_w));
  if (sh <= 0 || sw <= 0) fail("conv stride must be positive");
  return {(in_h - kh) / sh + 1, (in_w - kw) / sw + 1};
}

int Network::param_offset(int layer_index) const {
  int off = 0;
  for (int i = 0; i < layer_index; ++i) off += param_tensor_count(layers[i]);
  return off;
}

Network Network::build(std::vector<LayerSpec> layer_specs, std::uint64_t seed) {
  Network net;
  net.layers = std::move(layer_specs);
  Rng rng(mix_seed(seed, 0x4e57ULL));

  auto glorot = [&](Tensor& t, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
  };

  for (const auto& spec : net.layers) {
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      if (d->in <= 0 || d->out <= 0) fail("dense layer with non-positive dims");
      Tensor w(std::vector<int>{d->out, d->in});
      glorot(w, d->in, d->out);
      net.params.push_back(std::move(w));
      net.params.emplace_back(std::vector<int>{d->out});
    } else if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
      if (c->in_ch <= 0 || c->out_ch <= 0 || c->kh <= 0 || c->kw <= 0)
        fail("conv layer with non-positive dims");
      Tensor k(std::vector<int>{c->out_ch, c->in_ch, c->kh, c->kw});
      glorot(k, c->in_ch * c->kh * c->kw, c->out_ch * c->kh * c->kw);
      net.params.push_back(std::move(k));
      net.params.emplace_back(std::vector<int>{c->out_ch});
    }
  }
  return net;
}

namespace {

Tensor dense_forward(const DenseSpec& d, const Tensor& w, const Tensor& b,
                     const Tensor& in, int layer_index, const LayerSpec& spec) {
  if (in.size() != d.in)
    fail("input size " + std::to_string(in.size()) + " does not match " +
         layer_name(spec, layer_index) + " expecting " + std::to_string(d.in));
  Tensor out(std::vector<int>{d.out});
  for (int o = 0; o < d.out; ++o) {
    const double* wr = w.data.data() + static_cast<std::size_t>(o) * d.in;
    double acc = b.data[static_cast<std::size_t>(o)];
    for (int i = 0; i < d.in; ++i) acc += wr[i] * in.data[static_cast<std::size_t>(i)];
    out.data[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

// Patch matrix in k-major layout: row (ic,ky,kx) holds that tap for every
// output cell, so forward/backward run as axpy over contiguous rows. Buffers
// are reused per thread.
struct PatchMatrix {
  int rows = 0, cells = 0;
  std::vector<double>* buf = nullptr;

  double* row(int r) { return buf->data() + static_cast<std::size_t>(r) * cells; }
  const double* row(int r) const {
    return buf->data() + static_cast<std::size_t>(r) * cells;
  }
};

PatchMatrix build_patches(const Conv2dSpec& c, const Tensor& in, int oh, int ow) {
  thread_local std::vector<double> storage;
  const int ih = in.shape[1], iw = in.shape[2];
  PatchMatrix m;
  m.rows = c.in_ch * c.kh * c.kw;
  m.cells = oh * ow;
  storage.resize(static_cast<std::size_t>(m.rows) * m.cells);
  m.buf = &storage;

  int r = 0;
  for (int ic = 0; ic < c.in_ch; ++ic) {
    const double* in_ch = in.data.data() + static_cast<std::size_t>(ic) * ih * iw;
    for (int ky = 0; ky < c.kh; ++ky) {
      for (int kx = 0; kx < c.kw; ++kx, ++r) {
        double* dst = m.row(r);
        for (int oy = 0; oy < oh; ++oy) {
          const double* src = in_ch + (oy * c.sh + ky) * iw + kx;
          for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = src[ox * c.sw];
        }
      }
    }
  }
  return m;
}

// Direct loops win when the output grid is tiny (action heads).
constexpr int kPatchPathMinCells = 64;

Tensor conv_forward(const Conv2dSpec& c, const Tensor& k, const Tensor& b,
                    const Tensor& in, int layer_index, const LayerSpec& spec) {
  if (in.shape.size() != 3 || in.shape[0] != c.in_ch)
    fail("input shape does not match " + layer_name(spec, layer_index));
  const int ih = in.shape[1], iw = in.shape[2];
  const auto [oh, ow] = conv_output_geometry(ih, iw, c.kh, c.kw, c.sh, c.sw);
  Tensor out(std::vector<int>{c.out_ch, oh, ow});
  const int cells = oh * ow;
  const int taps = c.in_ch * c.kh * c.kw;

  if (cells >= kPatchPathMinCells) {
    const PatchMatrix m = build_patches(c, in, oh, ow);
    for (int oc = 0; oc < c.out_ch; ++oc) {
      double* out_ch = out.data.data() + static_cast<std::size_t>(oc) * cells;
      const double bias = b.data[static_cast<std::size_t>(oc)];
      for (int i = 0; i < cells; ++i) out_ch[i] = bias;
      const double* kk = k.data.data() + static_cast<std::size_t>(oc) * taps;
      for (int r = 0; r < taps; ++r) {
        const double wv = kk[r];
        const double* src = m.row(r);
        for (int i = 0; i < cells; ++i) out_ch[i] += wv * src[i];
      }
    }
    return out;
  }

  // cell-major path: per output cell, contiguous kernel-row dot products
  for (int oc = 0; oc < c.out_ch; ++oc) {
    double* out_ch = out.data.data() + static_cast<std::size_t>(oc) * cells;
    const double* koc = k.data.data() + static_cast<std::size_t>(oc) * taps;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
        for (int ic = 0; ic < c.in_ch; ++ic) {
          const double* in_ch = in.data.data() + static_cast<std::size_t>(ic) * ih * iw;
          const double* kic = koc + static_cast<std::size_t>(ic) * c.kh * c.kw;
          for (int ky = 0; ky < c.kh; ++ky) {
            const double* in_row = in_ch + (oy * c.sh + ky) * iw + ox * c.sw;
            const double* k_row = kic + ky * c.kw;
            int kx = 0;
            for (; kx + 4 <= c.kw; kx += 4) {
              a0 += k_row[kx] * in_row[kx];
              a1 += k_row[kx + 1] * in_row[kx + 1];
              a2 += k_row[kx + 2] * in_row[kx + 2];
              a3 += k_row[kx + 3] * in_row[kx + 3];
            }
            for (; kx < c.kw; ++kx) a0 += k_row[kx] * in_row[kx];
          }
        }
        out_ch[oy * ow + ox] =
            b.data[static_cast<std::size_t>(oc)] + (a0 + a1) + (a2 + a3);
      }
    }
  }
  return out;
}

}  // namespace

Tensor forward(const Network& net, const Tensor& input, Trace* trace) {
  // Trace slots are reused across calls so repeated traced forwards do not
  // churn the allocator.
  if (trace && trace->layer_inputs.size() != net.layers.size())
    trace->layer_inputs.assign(net.layers.size(), Tensor());
  Tensor cur = input;
  for (int li = 0; li < static_cast<int>(net.layers.size()); ++li) {
    if (trace) {
      Tensor& slot = trace->layer_inputs[static_cast<std::size_t>(li)];
      slot.shape = cur.shape;
      slot.data.assign(cur.data.begin(), cur.data.end());
    }
    const auto& spec = net.layers[static_cast<std::size_t>(li)];
    const int po = net.param_offset(li);
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      cur = dense_forward(*d, net.params[po], net.params[po + 1], cur, li, spec);
    } else if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
      cur = conv_forward(*c, net.params[po], net.params[po + 1], cur, li, spec);
    } else {
      for (double& v : cur.data) v = v > 0.0 ? v : 0.0;
    }
  }
  if (trace) {
    trace->output.shape = cur.shape;
    trace->output.data.assign(cur.data.begin(), cur.data.end());
  }
  return cur;
}

void Gradients::accumulate(const Gradients& other) {
  if (param_grads.size() != other.param_grads.size())
    fail("gradient accumulate: mismatched parameter sets");
  for (std::size_t i = 0; i < param_grads.size(); ++i) {
    auto& dst = param_grads[i].data;
    const auto& src = other.param_grads[i].data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  if (input_grad.data.size() == other.input_grad.data.size())
    for (std::size_t j = 0; j < input_grad.data.size(); ++j)
      input_grad.data[j] += other.input_grad.data[j];
}

Gradients backward(const Network& net, const Trace& trace, const Tensor& output_grad) {
  if (trace.layer_inputs.size() != net.layers.size())
    fail("backward: trace does not match network (stale trace?)");
  if (!output_grad.same_shape(trace.output))
    fail("backward: output gradient shape does not match traced output");

  Gradients g;
  g.param_grads.reserve(net.params.size());
  for (const auto& p : net.params) g.param_grads.emplace_back(Tensor(p.shape));

  Tensor grad = output_grad;
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const auto& spec = net.layers[static_cast<std::size_t>(li)];
    const Tensor& in = trace.layer_inputs[static_cast<std::size_t>(li)];
    const int po = net.param_offset(li);

    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      if (grad.size() != d->out) fail("backward: gradient mismatch at " + layer_name(spec, li));
      const Tensor& w = net.params[static_cast<std::size_t>(po)];
      Tensor in_grad(std::vector<int>{d->in});
      Tensor& wg = g.param_grads[static_cast<std::size_t>(po)];
      Tensor& bg = g.param_grads[static_cast<std::size_t>(po) + 1];
      for (int o = 0; o < d->out; ++o) {
        const double go = grad.data[static_cast<std::size_t>(o)];
        bg.data[static_cast<std::size_t>(o)] += go;
        const double* wr = w.data.data() + static_cast<std::size_t>(o) * d->in;
        double* wgr = wg.data.data() + static_cast<std::size_t>(o) * d->in;
        for (int i = 0; i < d->in; ++i) {
          wgr[i] += go * in.data[static_cast<std::size_t>(i)];
          in_grad.data[static_cast<std::size_t>(i)] += go * wr[i];
        }
      }
      grad = std::move(in_grad);
    } else if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
      const int ih = in.shape[1], iw = in.shape[2];
      const auto [oh, ow] = conv_output_geometry(ih, iw, c->kh, c->kw, c->sh, c->sw);
      if (grad.shape != std::vector<int>{c->out_ch, oh, ow})
        fail("backward: gradient mismatch at " + layer_name(spec, li));
      const Tensor& k = net.params[static_cast<std::size_t>(po)];
      Tensor& kg = g.param_grads[static_cast<std::size_t>(po)];
      Tensor& bg = g.param_grads[static_cast<std::size_t>(po) + 1];
      Tensor in_grad(in.shape);
      const int cells = oh * ow;
      const int taps = c->in_ch * c->kh * c->kw;

      if (cells >= kPatchPathMinCells) {
        const PatchMatrix m = build_patches(*c, in, oh, ow);
        thread_local std::vector<double> dm_storage;
        dm_storage.assign(static_cast<std::size_t>(taps) * cells, 0.0);

        for (int oc = 0; oc < c->out_ch; ++oc) {
          const double* gch = grad.data.data() + static_cast<std::size_t>(oc) * cells;
          // four-accumulator sums: fixed order, vectorizable
          double b0 = 0, b1 = 0, b2 = 0, b3 = 0;
          int i = 0;
          for (; i + 4 <= cells; i += 4) {
            b0 += gch[i];
            b1 += gch[i + 1];
            b2 += gch[i + 2];
            b3 += gch[i + 3];
          }
          for (; i < cells; ++i) b0 += gch[i];
          bg.data[static_cast<std::size_t>(oc)] += (b0 + b1) + (b2 + b3);

          const double* kk = k.data.data() + static_cast<std::size_t>(oc) * taps;
          double* kgr = kg.data.data() + static_cast<std::size_t>(oc) * taps;
          for (int r = 0; r < taps; ++r) {
            const double* src = m.row(r);
            double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            int j = 0;
            for (; j + 4 <= cells; j += 4) {
              a0 += gch[j] * src[j];
              a1 += gch[j + 1] * src[j + 1];
              a2 += gch[j + 2] * src[j + 2];
              a3 += gch[j + 3] * src[j + 3];
            }
            for (; j < cells; ++j) a0 += gch[j] * src[j];
            kgr[r] += (a0 + a1) + (a2 + a3);

            const double wv = kk[r];
            double* dmr = dm_storage.data() + static_cast<std::size_t>(r) * cells;
            for (int jj = 0; jj < cells; ++jj) dmr[jj] += wv * gch[jj];
          }
        }

        // scatter the patch gradients back into the input layout
        int r = 0;
        for (int ic = 0; ic < c->in_ch; ++ic) {
          double* ig_ch = in_grad.data.data() + static_cast<std::size_t>(ic) * ih * iw;
          for (int ky = 0; ky < c->kh; ++ky) {
            for (int kx = 0; kx < c->kw; ++kx, ++r) {
              const double* dmr = dm_storage.data() + static_cast<std::size_t>(r) * cells;
              for (int oy = 0; oy < oh; ++oy) {
                double* dst = ig_ch + (oy * c->sh + ky) * iw + kx;
                for (int ox = 0; ox < ow; ++ox) dst[ox * c->sw] += dmr[oy * ow + ox];
              }
            }
          }
        }
      } else {
        // cell-major: contiguous kernel-row updates per output cell
        for (int oc = 0; oc < c->out_ch; ++oc) {
          const double* gch = grad.data.data() + static_cast<std::size_t>(oc) * cells;
          const double* koc = k.data.data() + static_cast<std::size_t>(oc) * taps;
          double* kgoc = kg.data.data() + static_cast<std::size_t>(oc) * taps;
          double acc = 0.0;
          for (int i = 0; i < cells; ++i) acc += gch[i];
          bg.data[static_cast<std::size_t>(oc)] += acc;

          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double gv = gch[oy * ow + ox];
              if (gv == 0.0) continue;
              for (int ic = 0; ic < c->in_ch; ++ic) {
                const double* in_ch =
                    in.data.data() + static_cast<std::size_t>(ic) * ih * iw;
                double* ig_ch =
                    in_grad.data.data() + static_cast<std::size_t>(ic) * ih * iw;
                const std::size_t kb = static_cast<std::size_t>(ic) * c->kh * c->kw;
                for (int ky = 0; ky < c->kh; ++ky) {
                  const double* in_row = in_ch + (oy * c->sh + ky) * iw + ox * c->sw;
                  double* ig_row = ig_ch + (oy * c->sh + ky) * iw + ox * c->sw;
                  const double* k_row = koc + kb + ky * c->kw;
                  double* kg_row = kgoc + kb + ky * c->kw;
                  for (int kx = 0; kx < c->kw; ++kx) {
                    kg_row[kx] += gv * in_row[kx];
                    ig_row[kx] += gv * k_row[kx];
                  }
                }
              }
            }
          }
        }
      }
      grad = std::move(in_grad);
    } else {
      if (!grad.same_shape(in)) fail("backward: gradient mismatch at " + layer_name(spec, li));
      for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (in.data[i] <= 0.0) grad.data[i] = 0.0;
    }
  }
  g.input_grad = std::move(grad);
  return g;
}

void sgd_step(Network& net, const std::vector<Tensor>& grads, double learning_rate) {
  if (grads.size() != net.params.size()) fail("sgd_step: gradient/parameter mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!net.params[i].same_shape(grads[i])) fail("sgd_step: shape mismatch");
    for (const double v : grads[i].data)
      if (!std::isfinite(v))
        throw TrainingDivergence("sgd_step: non-finite gradient (training diverged)");
    for (std::size_t j = 0; j < grads[i].data.size(); ++j)
      net.params[i].data[j] -= learning_rate * grads[i].data[j];
  }
}

namespace {

constexpr char kMagic[4] = {'Z', 'N', 'W', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

float read_f32(std::istream& is) {
  const std::uint32_t u = read_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

void save_networks(const std::vector<const Network*>& nets, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_u32(os, 1);  // format version
  write_u32(os, static_cast<std::uint32_t>(nets.size()));
  for (const Network* net : nets) {
    write_u32(os, static_cast<std::uint32_t>(net->layers.size()));
    for (const auto& spec : net->layers) {
      if (const auto* d = std::get_if<DenseSpec>(&spec)) {
        write_u32(os, 0);
        write_u32(os, static_cast<std::uint32_t>(d->in));
        write_u32(os, static_cast<std::uint32_t>(d->out));
      } else if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
        write_u32(os, 1);
        write_u32(os, static_cast<std::uint32_t>(c->in_ch));
        write_u32(os, static_cast<std::uint32_t>(c->out_ch));
        write_u32(os, static_cast<std::uint32_t>(c->kh));
        write_u32(os, static_cast<std::uint32_t>(c->kw));
        write_u32(os, static_cast<std::uint32_t>(c->sh));
        write_u32(os, static_cast<std::uint32_t>(c->sw));
      } else {
        write_u32(os, 2);
      }
    }
  }
  for (const Network* net : nets)
    for (const auto& p : net->params)
      for (const double v : p.data) write_f32(os, static_cast<float>(v));
  if (!os) fail("write failed for " + path);
}

std::vector<Network> load_networks(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) fail(path + ": bad magic");
  const std::uint32_t version = read_u32(is);
  if (version != 1) fail(path + ": unsupported version");
  const std::uint32_t count = read_u32(is);

  std::vector<Network> nets(count);
  for (auto& net : nets) {
    const std::uint32_t n_layers = read_u32(is);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
      const std::uint32_t type = read_u32(is);
      if (type == 0) {
        DenseSpec d;
        d.in = static_cast<int>(read_u32(is));
        d.out = static_cast<int>(read_u32(is));
        net.layers.emplace_back(d);
        net.params.emplace_back(Tensor(std::vector<int>{d.out, d.in}));
        net.params.emplace_back(Tensor(std::vector<int>{d.out}));
      } else if (type == 1) {
        Conv2dSpec c;
        c.in_ch = static_cast<int>(read_u32(is));
        c.out_ch = static_cast<int>(read_u32(is));
        c.kh = static_cast<int>(read_u32(is));
        c.kw = static_cast<int>(read_u32(is));
        c.sh = static_cast<int>(read_u32(is));
        c.sw = static_cast<int>(read_u32(is));
        net.layers.emplace_back(c);
        net.params.emplace_back(Tensor(std::vector<int>{c.out_ch, c.in_ch, c.kh, c.kw}));
        net.params.emplace_back(Tensor(std::vector<int>{c.out_ch}));
      } else if (type == 2) {
        net.layers.emplace_back(ReluSpec{});
      } else {
        fail(path + ": unknown layer type");
      }
    }
  }
  for (auto& net : nets)
    for (auto& p : net.params)
      for (double& v : p.data) v = static_cast<double>(read_f32(is));
  if (!is) fail(path + ": truncated file");
  return nets;
}

void save_network(const Network& net, const std::string& path) {
  save_networks({&net}, path);
}

Network load_network(const std::string& path) {
  auto nets = load_networks(path);
  if (nets.size() != 1) fail(path + ": expected exactly one network");
  return std::move(nets[0]);
}

}  // namespace zoomdet::nn
