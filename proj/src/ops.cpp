#include "hvpr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "hvpr/error.hpp"

namespace hvpr::ops {

using detail::Node;

namespace {

// Gradient buffer of input `i`, or an empty span when it needs none.
std::span<double> input_grad(Node& node, std::size_t i) {
  auto& in = node.inputs[i];
  if (!in || !in->requires_grad) return {};
  return in->grad_buffer();
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.defined() && t.rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
              (t.defined() ? shape_str(t.shape()) : "undefined"));
}

double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto g = input_grad(n, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    auto ga = input_grad(n, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    auto gb = input_grad(n, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= n.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    auto ga = input_grad(n, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * bv[i];
    auto gb = input_grad(n, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result(Shape{1}, {s}, {a}, [](Node& n) {
    auto g = input_grad(n, 0);
    for (double& v : g) v += n.grad[0];
  });
}

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
  require(terms.size() == weights.size(), "weighted_sum: term/weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) s += weights[i] * terms[i].item();
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(Shape{1}, {s}, std::vector<Tensor>(terms.begin(), terms.end()),
                     [w](Node& n) {
                       for (std::size_t i = 0; i < w.size(); ++i) {
                         auto g = input_grad(n, i);
                         if (!g.empty()) g[0] += w[i] * n.grad[0];
                       }
                     });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& n) {
    auto g = input_grad(n, 0);
    const auto& x = n.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) g[i] += n.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.at(i)));
  return make_result(a.shape(), std::move(out), {a}, [](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = n.value[i];
      g[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
  require(weight.dim(0) == in, "linear: input width " + std::to_string(in) +
                                   " does not match weight " + shape_str(weight.shape()));
  require(!bias.defined() || bias.numel() == out_dim, "linear: bias size mismatch");
  std::vector<double> out(rows * out_dim, 0.0);
  const auto xv = x.values();
  const auto wv = weight.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = &out[r * out_dim];
    if (bias.defined()) {
      for (std::size_t j = 0; j < out_dim; ++j) o[j] = bias.at(j);
    }
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xv[r * in + i];
      if (xi == 0.0) continue;
      const double* w = &wv[i * out_dim];
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += xi * w[j];
    }
  }
  return make_result(Shape{rows, out_dim}, std::move(out), {x, weight, bias},
                     [rows, in, out_dim](Node& n) {
                       const auto& xv = n.inputs[0]->value;
                       const auto& wv = n.inputs[1]->value;
                       auto gx = input_grad(n, 0);
                       auto gw = input_grad(n, 1);
                       auto gb = n.inputs[2] ? input_grad(n, 2) : std::span<double>{};
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* go = &n.grad[r * out_dim];
                         if (!gb.empty()) {
                           for (std::size_t j = 0; j < out_dim; ++j) gb[j] += go[j];
                         }
                         for (std::size_t i = 0; i < in; ++i) {
                           const double* w = &wv[i * out_dim];
                           if (!gx.empty()) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < out_dim; ++j) acc += go[j] * w[j];
                             gx[r * in + i] += acc;
                           }
                           if (!gw.empty()) {
                             const double xi = xv[r * in + i];
                             if (xi == 0.0) continue;
                             double* g = &gw[i * out_dim];
                             for (std::size_t j = 0; j < out_dim; ++j) g[j] += xi * go[j];
                           }
                         }
                       }
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t rows = a.dim(0), cols = b.dim(0), width = a.dim(1);
  require(b.dim(1) == width, "matmul_nt: channel mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
  std::vector<double> out(rows * cols);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < width; ++k) acc += av[r * width + k] * bv[c * width + k];
      out[r * cols + c] = acc;
    }
  }
  return make_result(Shape{rows, cols}, std::move(out), {a, b}, [rows, cols, width](Node& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    auto ga = input_grad(n, 0);
    auto gb = input_grad(n, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double g = n.grad[r * cols + c];
        if (g == 0.0) continue;
        if (!ga.empty()) {
          for (std::size_t k = 0; k < width; ++k) ga[r * width + k] += g * bv[c * width + k];
        }
        if (!gb.empty()) {
          for (std::size_t k = 0; k < width; ++k) gb[c * width + k] += g * av[r * width + k];
        }
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) {
    require(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      require(i == axis || p.dim(i) == first[i],
              "concat: extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
    }
    extents.push_back(p.dim(axis));
    shape[axis] += p.dim(axis);
  }
  const std::size_t total = shape[axis];
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].values();
    const std::size_t block = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * block, block, out.begin() + (o * total + offset) * inner);
    }
    offset += extents[p];
  }
  return make_result(shape, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     [extents, outer, inner, total](Node& n) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < extents.size(); ++p) {
                         auto g = input_grad(n, p);
                         const std::size_t block = extents[p] * inner;
                         if (!g.empty()) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = &n.grad[(o * total + offset) * inner];
                             double* dst = &g[o * block];
                             for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                           }
                         }
                         offset += extents[p];
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require(a.rank() >= 1 && begin <= end && end <= a.dim(0), "slice_rows: bad range");
  const std::size_t width = a.numel() / std::max<std::size_t>(a.dim(0), 1);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> out(a.values().begin() + begin * width, a.values().begin() + end * width);
  return make_result(std::move(shape), std::move(out), {a}, [begin, width](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[begin * width + i] += n.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t width = a.dim(1);
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < a.dim(0), "gather_rows: index out of range");
    std::copy_n(a.values().begin() + rows[r] * width, width, out.begin() + r * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(Shape{rows.size(), width}, std::move(out), {a}, [idx, width](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < width; ++c) g[idx[r] * width + c] += n.grad[r * width + c];
    }
  });
}

Tensor take_along_rows(const Tensor& a, std::span<const std::size_t> cols, std::size_t k) {
  require_rank(a, 2, "take_along_rows");
  const std::size_t rows = a.dim(0), width = a.dim(1);
  require(cols.size() == rows * k, "take_along_rows: index count mismatch");
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      require(cols[r * k + j] < width, "take_along_rows: index out of range");
      out[r * k + j] = a.at(r * width + cols[r * k + j]);
    }
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return make_result(Shape{rows, k}, std::move(out), {a}, [idx, rows, width, k](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < k; ++j) g[r * width + idx[r * k + j]] += n.grad[r * k + j];
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t rows = a.dim(0), width = a.dim(1);
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &a.values()[r * width];
    double* y = &out[r * width];
    const double mx = *std::max_element(x, x + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < width; ++j) y[j] /= z;
  }
  return make_result(a.shape(), std::move(out), {a}, [rows, width](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &n.value[r * width];
      const double* gy = &n.grad[r * width];
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < width; ++j) g[r * width + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor aggregate(const Tensor& features, std::span<const std::size_t> idx, const Tensor& probs) {
  require_rank(features, 2, "aggregate");
  require_rank(probs, 2, "aggregate");
  const std::size_t rows = probs.dim(0), k = probs.dim(1), width = features.dim(1);
  require(idx.size() == rows * k, "aggregate: index count mismatch");
  std::vector<double> out(rows * width, 0.0);
  const auto fv = features.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = idx[r * k + j];
      require(src < features.dim(0), "aggregate: index out of range");
      const double p = probs.at(r * k + j);
      for (std::size_t c = 0; c < width; ++c) out[r * width + c] += p * fv[src * width + c];
    }
  }
  std::vector<std::size_t> sel(idx.begin(), idx.end());
  return make_result(Shape{rows, width}, std::move(out), {features, probs},
                     [sel, rows, k, width](Node& n) {
                       const auto& fv = n.inputs[0]->value;
                       const auto& pv = n.inputs[1]->value;
                       auto gf = input_grad(n, 0);
                       auto gp = input_grad(n, 1);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* go = &n.grad[r * width];
                         for (std::size_t j = 0; j < k; ++j) {
                           const std::size_t src = sel[r * k + j];
                           if (!gp.empty()) {
                             double acc = 0.0;
                             for (std::size_t c = 0; c < width; ++c) acc += go[c] * fv[src * width + c];
                             gp[r * k + j] += acc;
                           }
                           if (!gf.empty()) {
                             const double p = pv[r * k + j];
                             for (std::size_t c = 0; c < width; ++c) gf[src * width + c] += p * go[c];
                           }
                         }
                       }
                     });
}

Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t count) {
  require_rank(x, 2, "segment_max");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  require(segment.size() == rows, "segment_max: segment id count mismatch");
  std::vector<double> out(count * width, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(count * width, rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t s = segment[r];
    require(s < count, "segment_max: segment id out of range");
    for (std::size_t c = 0; c < width; ++c) {
      const double v = x.at(r * width + c);
      if (arg[s * width + c] == rows || v > out[s * width + c]) {
        out[s * width + c] = v;
        arg[s * width + c] = r;
      }
    }
  }
  for (std::size_t i = 0; i < arg.size(); ++i) {
    require(arg[i] != rows, "segment_max: empty segment " + std::to_string(i / std::max<std::size_t>(width, 1)));
  }
  return make_result(Shape{count, width}, std::move(out), {x}, [arg, width](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i] * width + i % width] += n.grad[i];
  });
}

Tensor scatter_to_image(const Tensor& x, std::span<const GridCell> cells, std::size_t batch,
                        std::size_t height, std::size_t width) {
  require_rank(x, 2, "scatter_to_image");
  require(x.dim(0) == cells.size(), "scatter_to_image: feature rows do not match cell count");
  const std::size_t channels = x.dim(1);
  std::set<GridCell> unique;
  std::vector<std::size_t> offsets(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const GridCell& c = cells[i];
    require(c.batch < batch && c.row < height && c.col < width,
            "scatter_to_image: cell outside the grid");
    if (!unique.insert(c).second) {
      throw ShapeError("scatter_to_image: duplicate cell (" + std::to_string(c.batch) + ", " +
                       std::to_string(c.row) + ", " + std::to_string(c.col) + ")");
    }
    offsets[i] = c.batch * channels * height * width + c.row * width + c.col;
  }
  const std::size_t plane = height * width;
  std::vector<double> out(batch * channels * plane, 0.0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t ch = 0; ch < channels; ++ch) out[offsets[i] + ch * plane] = x.at(i * channels + ch);
  }
  return make_result(Shape{batch, channels, height, width}, std::move(out), {x},
                     [offsets, channels, plane](Node& n) {
                       auto g = input_grad(n, 0);
                       for (std::size_t i = 0; i < offsets.size(); ++i) {
                         for (std::size_t ch = 0; ch < channels; ++ch) {
                           g[i * channels + ch] += n.grad[offsets[i] + ch * plane];
                         }
                       }
                     });
}

Tensor gather_from_image(const Tensor& image, std::span<const GridCell> cells) {
  require_rank(image, 4, "gather_from_image");
  const std::size_t channels = image.dim(1), height = image.dim(2), width = image.dim(3);
  const std::size_t plane = height * width;
  std::vector<std::size_t> offsets(cells.size());
  std::vector<double> out(cells.size() * channels);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const GridCell& c = cells[i];
    require(c.batch < image.dim(0) && c.row < height && c.col < width,
            "gather_from_image: cell outside the grid");
    offsets[i] = c.batch * channels * plane + c.row * width + c.col;
    for (std::size_t ch = 0; ch < channels; ++ch) out[i * channels + ch] = image.at(offsets[i] + ch * plane);
  }
  return make_result(Shape{cells.size(), channels}, std::move(out), {image},
                     [offsets, channels, plane](Node& n) {
                       auto g = input_grad(n, 0);
                       for (std::size_t i = 0; i < offsets.size(); ++i) {
                         for (std::size_t ch = 0; ch < channels; ++ch) {
                           g[offsets[i] + ch * plane] += n.grad[i * channels + ch];
                         }
                       }
                     });
}

namespace {

struct ConvGeom {
  std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;
};

// Range of output positions o with 0 ≤ o·stride − pad + k < extent.
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, const ConvGeom& g,
                                                std::size_t extent, std::size_t out_extent) {
  const long lo_num = static_cast<long>(g.pad) - static_cast<long>(k);
  long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long>(g.stride) - 1) / static_cast<long>(g.stride);
  const long hi_num = static_cast<long>(extent) - 1 + static_cast<long>(g.pad) - static_cast<long>(k);
  long hi = hi_num < 0 ? -1 : hi_num / static_cast<long>(g.stride);
  hi = std::min(hi, static_cast<long>(out_extent) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  require(weight.dim(1) == x.dim(1), "conv2d: input channels " + std::to_string(x.dim(1)) +
                                         " vs weight " + shape_str(weight.shape()));
  require(weight.dim(2) == weight.dim(3), "conv2d: square kernels only");
  require(stride >= 1, "conv2d: stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, pad, 0, 0};
  require(g.height + 2 * pad >= g.kernel && g.width + 2 * pad >= g.kernel, "conv2d: kernel larger than input");
  g.out_h = (g.height + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kernel) / stride + 1;
  require(!bias.defined() || bias.numel() == g.out_ch, "conv2d: bias size mismatch");
  std::vector<double> out(g.batch * g.out_ch * g.out_h * g.out_w, 0.0);
  const auto xv = x.values();
  const auto wv = weight.values();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_ch; ++co) {
      double* o = &out[(b * g.out_ch + co) * g.out_h * g.out_w];
      if (bias.defined()) std::fill_n(o, g.out_h * g.out_w, bias.at(co));
      for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
        const double* in = &xv[(b * g.in_ch + ci) * g.height * g.width];
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const auto [oy0, oy1] = valid_range(ky, g, g.height, g.out_h);
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const double w = wv[((co * g.in_ch + ci) * g.kernel + ky) * g.kernel + kx];
            if (w == 0.0) continue;
            const auto [ox0, ox1] = valid_range(kx, g, g.width, g.out_w);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const double* row = in + (oy * stride + ky - pad) * g.width;
              double* orow = o + oy * g.out_w;
              for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += w * row[ox * stride + kx - pad];
            }
          }
        }
      }
    }
  }
  return make_result(Shape{g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {x, weight, bias},
                     [g](Node& n) {
                       const auto& xv = n.inputs[0]->value;
                       const auto& wv = n.inputs[1]->value;
                       auto gx = input_grad(n, 0);
                       auto gw = input_grad(n, 1);
                       auto gb = n.inputs[2] ? input_grad(n, 2) : std::span<double>{};
                       const std::size_t plane = g.out_h * g.out_w;
                       for (std::size_t b = 0; b < g.batch; ++b) {
                         for (std::size_t co = 0; co < g.out_ch; ++co) {
                           const double* go = &n.grad[(b * g.out_ch + co) * plane];
                           if (!gb.empty()) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < plane; ++i) acc += go[i];
                             gb[co] += acc;
                           }
                           for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
                             const std::size_t in_off = (b * g.in_ch + ci) * g.height * g.width;
                             for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                               const auto [oy0, oy1] = valid_range(ky, g, g.height, g.out_h);
                               for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                                 const std::size_t widx = ((co * g.in_ch + ci) * g.kernel + ky) * g.kernel + kx;
                                 const double w = wv[widx];
                                 const auto [ox0, ox1] = valid_range(kx, g, g.width, g.out_w);
                                 double wacc = 0.0;
                                 for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                   const std::size_t row = in_off + (oy * g.stride + ky - g.pad) * g.width;
                                   const double* grow = go + oy * g.out_w;
                                   for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                     const std::size_t xi = row + ox * g.stride + kx - g.pad;
                                     wacc += grow[ox] * xv[xi];
                                     if (!gx.empty()) gx[xi] += grow[ox] * w;
                                   }
                                 }
                                 if (!gw.empty()) gw[widx] += wacc;
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride) {
  require_rank(x, 4, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d");
  require(weight.dim(0) == x.dim(1), "conv_transpose2d: input channel mismatch");
  require(weight.dim(2) == weight.dim(3), "conv_transpose2d: square kernels only");
  require(stride >= 1, "conv_transpose2d: stride must be positive");
  const std::size_t batch = x.dim(0), in_ch = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t out_ch = weight.dim(1), kernel = weight.dim(2);
  const std::size_t out_h = (height - 1) * stride + kernel, out_w = (width - 1) * stride + kernel;
  require(!bias.defined() || bias.numel() == out_ch, "conv_transpose2d: bias size mismatch");
  std::vector<double> out(batch * out_ch * out_h * out_w, 0.0);
  const auto xv = x.values();
  const auto wv = weight.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < out_ch; ++co) {
      double* o = &out[(b * out_ch + co) * out_h * out_w];
      if (bias.defined()) std::fill_n(o, out_h * out_w, bias.at(co));
      for (std::size_t ci = 0; ci < in_ch; ++ci) {
        const double* in = &xv[(b * in_ch + ci) * height * width];
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const double w = wv[((ci * out_ch + co) * kernel + ky) * kernel + kx];
            for (std::size_t iy = 0; iy < height; ++iy) {
              double* orow = o + (iy * stride + ky) * out_w + kx;
              const double* irow = in + iy * width;
              for (std::size_t ix = 0; ix < width; ++ix) orow[ix * stride] += w * irow[ix];
            }
          }
        }
      }
    }
  }
  return make_result(
      Shape{batch, out_ch, out_h, out_w}, std::move(out), {x, weight, bias},
      [=](Node& n) {
        const auto& xv = n.inputs[0]->value;
        const auto& wv = n.inputs[1]->value;
        auto gx = input_grad(n, 0);
        auto gw = input_grad(n, 1);
        auto gb = n.inputs[2] ? input_grad(n, 2) : std::span<double>{};
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < out_ch; ++co) {
            const double* go = &n.grad[(b * out_ch + co) * out_h * out_w];
            if (!gb.empty()) {
              double acc = 0.0;
              for (std::size_t i = 0; i < out_h * out_w; ++i) acc += go[i];
              gb[co] += acc;
            }
            for (std::size_t ci = 0; ci < in_ch; ++ci) {
              const std::size_t in_off = (b * in_ch + ci) * height * width;
              for (std::size_t ky = 0; ky < kernel; ++ky) {
                for (std::size_t kx = 0; kx < kernel; ++kx) {
                  const std::size_t widx = ((ci * out_ch + co) * kernel + ky) * kernel + kx;
                  const double w = wv[widx];
                  double wacc = 0.0;
                  for (std::size_t iy = 0; iy < height; ++iy) {
                    const double* grow = go + (iy * stride + ky) * out_w + kx;
                    for (std::size_t ix = 0; ix < width; ++ix) {
                      const std::size_t xi = in_off + iy * width + ix;
                      wacc += grow[ix * stride] * xv[xi];
                      if (!gx.empty()) gx[xi] += grow[ix * stride] * w;
                    }
                  }
                  if (!gw.empty()) gw[widx] += wacc;
                }
              }
            }
          }
        }
      });
}

Tensor channel_max(const Tensor& x) {
  require_rank(x, 4, "channel_max");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(batch * plane);
  std::vector<std::size_t> arg(batch * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = b * channels * plane + p;
      for (std::size_t c = 1; c < channels; ++c) {
        const std::size_t i = (b * channels + c) * plane + p;
        if (x.at(i) > x.at(best)) best = i;
      }
      out[b * plane + p] = x.at(best);
      arg[b * plane + p] = best;
    }
  }
  return make_result(Shape{batch, 1, x.dim(2), x.dim(3)}, std::move(out), {x}, [arg](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += n.grad[i];
  });
}

Tensor channel_mean(const Tensor& x) {
  require_rank(x, 4, "channel_mean");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(batch * plane, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) out[b * plane + p] += x.at((b * channels + c) * plane + p);
    }
  }
  for (double& v : out) v /= static_cast<double>(channels);
  return make_result(Shape{batch, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
                     [batch, channels, plane](Node& n) {
                       auto g = input_grad(n, 0);
                       const double inv = 1.0 / static_cast<double>(channels);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           for (std::size_t p = 0; p < plane; ++p) {
                             g[(b * channels + c) * plane + p] += n.grad[b * plane + p] * inv;
                           }
                         }
                       }
                     });
}

Tensor mul_channel_broadcast(const Tensor& features, const Tensor& attention) {
  require_rank(features, 4, "mul_channel_broadcast");
  require_rank(attention, 4, "mul_channel_broadcast");
  const std::size_t batch = features.dim(0), channels = features.dim(1);
  const std::size_t plane = features.dim(2) * features.dim(3);
  require(attention.dim(0) == batch && attention.dim(1) == 1 && attention.dim(2) == features.dim(2) &&
              attention.dim(3) == features.dim(3),
          "mul_channel_broadcast: attention " + shape_str(attention.shape()) +
              " does not align with features " + shape_str(features.shape()));
  std::vector<double> out(features.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * channels + c) * plane + p;
        out[i] = features.at(i) * attention.at(b * plane + p);
      }
    }
  }
  return make_result(features.shape(), std::move(out), {features, attention},
                     [batch, channels, plane](Node& n) {
                       const auto& fv = n.inputs[0]->value;
                       const auto& av = n.inputs[1]->value;
                       auto gf = input_grad(n, 0);
                       auto ga = input_grad(n, 1);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           for (std::size_t p = 0; p < plane; ++p) {
                             const std::size_t i = (b * channels + c) * plane + p;
                             if (!gf.empty()) gf[i] += n.grad[i] * av[b * plane + p];
                             if (!ga.empty()) ga[b * plane + p] += n.grad[i] * fv[i];
                           }
                         }
                       }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
  require(x.rank() >= 2, "batch_norm: rank must be at least 2");
  const std::size_t outer = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.numel() / std::max<std::size_t>(outer * channels, 1);
  require(gamma.numel() == channels && beta.numel() == channels &&
              running_mean.numel() == channels && running_var.numel() == channels,
          "batch_norm: parameter size mismatch for " + shape_str(x.shape()));
  const std::size_t count = outer * inner;
  std::vector<double> mean(channels, 0.0), inv_std(channels, 0.0);
  const auto xv = x.values();
  if (training && count > 0) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = &xv[(o * channels + c) * inner];
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mean[c] = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = &xv[(o * channels + c) * inner];
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - mean[c]) * (p[i] - mean[c]);
      }
      const double var = v / static_cast<double>(count);
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      running_mean.values()[c] = (1.0 - momentum) * running_mean.at(c) + momentum * mean[c];
      running_var.values()[c] = (1.0 - momentum) * running_var.at(c) + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = running_mean.at(c);
      inv_std[c] = 1.0 / std::sqrt(running_var.at(c) + eps);
    }
  }
  std::vector<double> normalized(x.numel()), out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        normalized[base + i] = (xv[base + i] - mean[c]) * inv_std[c];
        out[base + i] = gamma.at(c) * normalized[base + i] + beta.at(c);
      }
    }
  }
  const bool batch_stats = training && count > 0;
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [normalized = std::move(normalized), inv_std, outer, channels, inner, count, batch_stats](Node& n) {
        const auto& gv = n.inputs[1]->value;
        auto gx = input_grad(n, 0);
        auto gg = input_grad(n, 1);
        auto gbeta = input_grad(n, 2);
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_dy += n.grad[base + i];
              sum_dy_xhat += n.grad[base + i] * normalized[base + i];
            }
          }
          if (!gg.empty()) gg[c] += sum_dy_xhat;
          if (!gbeta.empty()) gbeta[c] += sum_dy;
          if (gx.empty()) continue;
          const double scale_c = gv[c] * inv_std[c];
          const double m = static_cast<double>(count);
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              if (batch_stats) {
                gx[base + i] += scale_c * (n.grad[base + i] - sum_dy / m - normalized[base + i] * sum_dy_xhat / m);
              } else {
                gx[base + i] += scale_c * n.grad[base + i];
              }
            }
          }
        }
      });
}

Tensor row_norm_sum(const Tensor& x) {
  require_rank(x, 2, "row_norm_sum");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  std::vector<double> norms(rows, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < width; ++c) s += x.at(r * width + c) * x.at(r * width + c);
    norms[r] = std::sqrt(s);
    total += norms[r];
  }
  return make_result(Shape{1}, {total}, {x}, [norms, width](Node& n) {
    auto g = input_grad(n, 0);
    const auto& xv = n.inputs[0]->value;
    for (std::size_t r = 0; r < norms.size(); ++r) {
      if (norms[r] == 0.0) continue;
      const double f = n.grad[0] / norms[r];
      for (std::size_t c = 0; c < width; ++c) g[r * width + c] += f * xv[r * width + c];
    }
  });
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

Tensor smooth_l1_sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += smooth_l1(v);
  return make_result(Shape{1}, {total}, {x}, [](Node& n) {
    auto g = input_grad(n, 0);
    const auto& xv = n.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = std::abs(xv[i]) < 1.0 ? xv[i] : (xv[i] > 0 ? 1.0 : -1.0);
      g[i] += n.grad[0] * d;
    }
  });
}

Tensor focal_loss(const Tensor& logits, std::span<const int> targets, double alpha, double gamma) {
  require(logits.numel() == targets.size(), "focal_loss: logit/target count mismatch");
  constexpr double kClamp = 30.0;
  double total = 0.0;
  std::vector<double> dlogit(logits.numel(), 0.0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double raw = logits.at(i);
    const double x = std::clamp(raw, -kClamp, kClamp);
    const double p = 1.0 / (1.0 + std::exp(-x));
    const bool in_range = raw > -kClamp && raw < kClamp;
    if (targets[i] == 1) {
      const double log_p = log_sigmoid(x);
      total += -alpha * std::pow(1.0 - p, gamma) * log_p;
      if (in_range) {
        const double tail = gamma == 0.0 ? 1.0 : std::pow(1.0 - p, gamma);
        dlogit[i] = alpha * tail * (gamma * p * log_p - (1.0 - p));
      }
    } else {
      const double log_q = log_sigmoid(-x);
      total += -(1.0 - alpha) * std::pow(p, gamma) * log_q;
      if (in_range) {
        const double head = gamma == 0.0 ? 1.0 : std::pow(p, gamma);
        dlogit[i] = (1.0 - alpha) * head * (p - gamma * (1.0 - p) * log_q);
      }
    }
  }
  return make_result(Shape{1}, {total}, {logits}, [dlogit = std::move(dlogit)](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * dlogit[i];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  require(targets.size() == rows, "softmax_cross_entropy: target count mismatch");
  std::vector<double> probs(rows * k);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < k,
            "softmax_cross_entropy: target out of range");
    const double* x = &logits.values()[r * k];
    const double mx = *std::max_element(x, x + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(x[j] - log_z);
    total += log_z - x[targets[r]];
  }
  std::vector<int> t(targets.begin(), targets.end());
  return make_result(Shape{1}, {total}, {logits}, [probs = std::move(probs), t, k](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t r = 0; r < t.size(); ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const double y = static_cast<int>(j) == t[r] ? 1.0 : 0.0;
        g[r * k + j] += n.grad[0] * (probs[r * k + j] - y);
      }
    }
  });
}

Tensor gather_flat(const Tensor& x, std::span<const std::size_t> idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < x.numel(), "gather_flat: index out of range");
    out[i] = x.at(idx[i]);
  }
  std::vector<std::size_t> sel(idx.begin(), idx.end());
  return make_result(Shape{idx.size()}, std::move(out), {x}, [sel](Node& n) {
    auto g = input_grad(n, 0);
    for (std::size_t i = 0; i < sel.size(); ++i) g[sel[i]] += n.grad[i];
  });
}

}  // namespace hvpr::ops
