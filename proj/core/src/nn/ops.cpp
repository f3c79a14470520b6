#include "stpi/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace stpi::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

Tensor& grad_of(const std::shared_ptr<Node>& p) { return p->grad_buffer(); }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, "matmul: inner dimensions " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out({n, m}, 0.0);
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), n, k, m);
  return make_node(std::move(out), {a, b}, "matmul", [n, k, m](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      std::vector<double> scratch(m * k);
      kernels::gemm_nt(self.grad.data(), pb->value.data(), grad_of(pa).data(), scratch.data(), n, m, k);
    }
    if (pb->requires_grad) kernels::gemm_tn(pa->value.data(), self.grad.data(), grad_of(pb).data(), n, k, m);
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  const std::size_t n = x.rows(), in = x.cols(), out_dim = w.cols();
  require(w.rows() == in, "linear: input width " + std::to_string(in) + " vs weight " + shape_string(w.shape()));
  require(bias.value().size() == out_dim, "linear: bias length mismatch");
  Tensor out({n, out_dim}, 0.0);
  kernels::gemm_nn(x.value().data(), w.value().data(), out.data(), n, in, out_dim);
  const double* b = bias.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * out_dim;
    for (std::size_t j = 0; j < out_dim; ++j) row[j] += b[j];
  }
  return make_node(std::move(out), {x, w, bias}, "linear", [n, in, out_dim](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const auto& pb = self.parents[2];
    if (px->requires_grad) {
      std::vector<double> scratch(out_dim * in);
      kernels::gemm_nt(self.grad.data(), pw->value.data(), grad_of(px).data(), scratch.data(), n, out_dim, in);
    }
    if (pw->requires_grad) kernels::gemm_tn(px->value.data(), self.grad.data(), grad_of(pw).data(), n, in, out_dim);
    if (pb->requires_grad) {
      double* gb = grad_of(pb).data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = self.grad.data() + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[j];
      }
    }
  });
}

Var linear(const Var& x, const Var& w) { return matmul(x, w); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_node(std::move(out), {a, b}, "add", [](Node& self) {
    for (const auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_node(std::move(out), {a, b}, "sub", [](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = grad_of(self.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = grad_of(self.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(std::move(out), {a, b}, "mul", [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Tensor& g = grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& g = grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_node(std::move(out), {a}, "scale", [s](Node& self) {
    Tensor& g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_row(const Var& x, const Var& row) {
  const std::size_t n = x.rows(), c = x.cols();
  require(row.value().size() == c, "add_row: row length mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row.value()[j];
  }
  return make_node(std::move(out), {x, row}, "add_row", [n, c](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = grad_of(self.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = grad_of(self.parents[1]);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
    }
  });
}

Var gelu(const Var& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Tensor out = x.value();
  for (double& v : out.values()) {
    const double u = k * (v + c * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return make_node(std::move(out), {x}, "gelu", [](Node& self) {
    const auto& p = self.parents[0];
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = p->value[i];
      const double u = k * (v + c * v * v * v);
      const double t = std::tanh(u);
      const double du = k * (1.0 + 3.0 * c * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Var softplus(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  return make_node(std::move(out), {x}, "softplus", [](Node& self) {
    const auto& p = self.parents[0];
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (1.0 + std::exp(-p->value[i]));
  });
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  return make_node(std::move(out), {x}, "tanh", [](Node& self) {
    Tensor& g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t n = x.rows(), c = x.cols();
  require(gamma.value().size() == c && beta.value().size() == c, "layer_norm: parameter length mismatch");
  Tensor out({n, c}, 0.0);
  auto xhat = std::make_shared<std::vector<double>>(n * c);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.value().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xi[j] - mu) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = gamma.value()[j] * h + beta.value()[j];
    }
  }
  return make_node(std::move(out), {x, gamma, beta}, "layer_norm", [n, c, xhat, inv_std](Node& self) {
    const auto& px = self.parents[0];
    const auto& pg = self.parents[1];
    const auto& pb = self.parents[2];
    if (pg->requires_grad) {
      Tensor& g = grad_of(pg);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * (*xhat)[i * c + j];
      }
    }
    if (pb->requires_grad) {
      Tensor& g = grad_of(pb);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
    }
    if (px->requires_grad) {
      Tensor& g = grad_of(px);
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t i = 0; i < n; ++i) {
        double mean_d = 0.0, mean_dh = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double d = self.grad[i * c + j] * pg->value[j];
          mean_d += d;
          mean_dh += d * (*xhat)[i * c + j];
        }
        mean_d *= inv_c;
        mean_dh *= inv_c;
        for (std::size_t j = 0; j < c; ++j) {
          const double d = self.grad[i * c + j] * pg->value[j];
          g[i * c + j] += (*inv_std)[i] * (d - mean_d - (*xhat)[i * c + j] * mean_dh);
        }
      }
    }
  });
}

Var masked_attention(const Var& q, const Var& k, const Var& v, const AttentionMask& mask, std::size_t heads) {
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
  require(k.cols() == d && v.cols() == d && v.rows() == nk, "masked_attention: q/k/v shape mismatch");
  require(heads >= 1 && d % heads == 0, "masked_attention: head count " + std::to_string(heads) +
                                            " does not divide width " + std::to_string(d));
  require(mask.queries() == nq && mask.keys() == nk,
          "masked_attention: mask " + std::to_string(mask.queries()) + "x" + std::to_string(mask.keys()) +
              " does not match sequence " + std::to_string(nq) + "x" + std::to_string(nk));
  mask.validate();

  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  // allowed key lists per query row, ascending
  auto keys_of = std::make_shared<std::vector<std::vector<std::size_t>>>(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    auto& ks = (*keys_of)[i];
    for (std::size_t j = 0; j < nk; ++j) {
      if (mask.allowed(i, j)) ks.push_back(j);
    }
  }
  auto probs = std::make_shared<std::vector<double>>(heads * nq * nk, 0.0);
  Tensor out({nq, d}, 0.0);
  const double* Q = q.value().data();
  const double* K = k.value().data();
  const double* V = v.value().data();
  std::vector<double> scores(nk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < nq; ++i) {
      const auto& ks = (*keys_of)[i];
      double mx = -INFINITY;
      for (std::size_t j : ks) {
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += Q[i * d + off + t] * K[j * d + off + t];
        s *= inv_sqrt;
        scores[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j : ks) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      double* p = probs->data() + (h * nq + i) * nk;
      double* o = out.data() + i * d + off;
      for (std::size_t j : ks) {
        p[j] = scores[j] / z;
        for (std::size_t t = 0; t < dh; ++t) o[t] += p[j] * V[j * d + off + t];
      }
    }
  }
  return make_node(std::move(out), {q, k, v}, "masked_attention",
                   [nq, nk, d, dh, heads, inv_sqrt, keys_of, probs](Node& self) {
                     const auto& pq = self.parents[0];
                     const auto& pk = self.parents[1];
                     const auto& pv = self.parents[2];
                     const double* Q = pq->value.data();
                     const double* K = pk->value.data();
                     const double* V = pv->value.data();
                     double* dQ = pq->requires_grad ? grad_of(pq).data() : nullptr;
                     double* dK = pk->requires_grad ? grad_of(pk).data() : nullptr;
                     double* dV = pv->requires_grad ? grad_of(pv).data() : nullptr;
                     const double* dO = self.grad.data();
                     std::vector<double> dp(nk);
                     for (std::size_t h = 0; h < heads; ++h) {
                       const std::size_t off = h * dh;
                       for (std::size_t i = 0; i < nq; ++i) {
                         const auto& ks = (*keys_of)[i];
                         const double* p = probs->data() + (h * nq + i) * nk;
                         const double* go = dO + i * d + off;
                         double row_dot = 0.0;
                         for (std::size_t j : ks) {
                           double s = 0.0;
                           for (std::size_t t = 0; t < dh; ++t) s += go[t] * V[j * d + off + t];
                           dp[j] = s;
                           row_dot += p[j] * s;
                           if (dV) {
                             for (std::size_t t = 0; t < dh; ++t) dV[j * d + off + t] += p[j] * go[t];
                           }
                         }
                         for (std::size_t j : ks) {
                           const double ds = p[j] * (dp[j] - row_dot) * inv_sqrt;
                           if (dQ) {
                             for (std::size_t t = 0; t < dh; ++t) dQ[i * d + off + t] += ds * K[j * d + off + t];
                           }
                           if (dK) {
                             for (std::size_t t = 0; t < dh; ++t) dK[j * d + off + t] += ds * Q[i * d + off + t];
                           }
                         }
                       }
                     }
                   });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t n = 0;
  for (const Var& p : parts) {
    require(p.cols() == c, "concat_rows: column mismatch");
    n += p.rows();
  }
  Tensor out({n, c}, 0.0);
  std::size_t at = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + at);
    at += p.value().size();
  }
  return make_node(std::move(out), parts, "concat_rows", [](Node& self) {
    std::size_t at = 0;
    for (const auto& p : self.parents) {
      const std::size_t sz = p->value.size();
      if (p->requires_grad) {
        Tensor& g = grad_of(p);
        for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[at + i];
      }
      at += sz;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    require(p.rows() == n, "concat_cols: row mismatch");
    c += p.cols();
  }
  Tensor out({n, c}, 0.0);
  std::size_t col = 0;
  for (const Var& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < pc; ++j) out[i * c + col + j] = p.value()[i * pc + j];
    }
    col += pc;
  }
  return make_node(std::move(out), parts, "concat_cols", [n, c](Node& self) {
    std::size_t col = 0;
    for (const auto& p : self.parents) {
      const std::size_t pc = p->value.cols();
      if (p->requires_grad) {
        Tensor& g = grad_of(p);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += self.grad[i * c + col + j];
        }
      }
      col += pc;
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t c = x.cols();
  require(begin <= end && end <= x.rows(), "slice_rows: range out of bounds");
  Tensor out = x.value().row_slice(begin, end);
  return make_node(std::move(out), {x}, "slice_rows", [begin, end, c](Node& self) {
    Tensor& g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < (end - begin) * c; ++i) g[begin * c + i] += self.grad[i];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_node(std::move(out), {x}, "reshape", [](Node& self) {
    Tensor& g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var gather_rows(const Var& table, const std::vector<std::size_t>& indices) {
  const std::size_t c = table.cols(), n = indices.size();
  Tensor out({n, c}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    require(indices[i] < table.rows(), "gather_rows: index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(table.value().data() + indices[i] * c, c, out.data() + i * c);
  }
  return make_node(std::move(out), {table}, "gather_rows", [indices, c](Node& self) {
    Tensor& g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[indices[i] * c + j] += self.grad[i * c + j];
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_node(Tensor::scalar(s), {x}, "sum", [](Node& self) {
    Tensor& g = grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  require(n > 0, "mean: empty input");
  return scale(sum(x), 1.0 / n);
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& targets, const std::vector<double>& weights) {
  const std::size_t n = logits.rows(), v = logits.cols();
  require(targets.size() == n && weights.size() == n, "cross_entropy: targets/weights length mismatch");
  auto probs = std::make_shared<std::vector<double>>(n * v, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    require(targets[i] < v, "cross_entropy: target out of range");
    const double* row = logits.value().data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] = std::exp(row[j] - lse);
    total += weights[i] * (lse - row[targets[i]]);
  }
  return make_node(Tensor::scalar(total), {logits}, "cross_entropy", [n, v, probs, targets, weights](Node& self) {
    Tensor& g = grad_of(self.parents[0]);
    const double up = self.grad[0];
    for (std::size_t i = 0; i < n; ++i) {
      if (weights[i] == 0.0) continue;
      for (std::size_t j = 0; j < v; ++j) {
        const double onehot = j == targets[i] ? 1.0 : 0.0;
        g[i * v + j] += up * weights[i] * ((*probs)[i * v + j] - onehot);
      }
    }
  });
}

Var l1_loss(const Var& pred, const Tensor& target) {
  require(pred.value().size() == target.size(), "l1_loss: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += std::abs(pred.value()[i] - target[i]);
  return make_node(Tensor::scalar(s), {pred}, "l1_loss", [target](Node& self) {
    const auto& p = self.parents[0];
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = p->value[i] - target[i];
      g[i] += self.grad[0] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
  });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  require(pred.value().size() == target.size() && target.size() > 0, "mse_loss: size mismatch");
  const double n = static_cast<double>(target.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.value()[i] - target[i];
    s += d * d;
  }
  return make_node(Tensor::scalar(s / n), {pred}, "mse_loss", [target, n](Node& self) {
    const auto& p = self.parents[0];
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * 2.0 * (p->value[i] - target[i]) / n;
  });
}

}  // namespace stpi::nn
