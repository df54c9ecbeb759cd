#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "egosc/kernels.hpp"
#include "egosc/tensor.hpp"

// Reverse-mode autodiff over Tensor<T>. Graphs are rebuilt every step from
// the current parameter values; backward() walks the tape once in reverse
// topological order. Templated so the same graph code runs in float for
// training and double for finite-difference checks.

namespace egosc::ad {

using egosc::ContractError;
using egosc::Tensor;

enum class OpKind : std::uint8_t { generic, relu };

template <typename T>
class Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
class Node {
 public:
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  OpKind kind = OpKind::generic;
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backprop;

  explicit Node(Tensor<T> v) : value(std::move(v)) {}

  void accumulate(const Tensor<T>& g) {
    if (!requires_grad) return;
    if (grad.numel() == 0) grad = Tensor<T>(value.shape());
    grad.add_(g);
  }
  Tensor<T>& grad_buf() {
    if (grad.numel() == 0) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
Var<T> constant(Tensor<T> v) {
  return std::make_shared<Node<T>>(std::move(v));
}

template <typename T>
Var<T> param(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>(std::move(v));
  n->requires_grad = true;
  return n;
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop, OpKind kind = OpKind::generic) {
  auto n = std::make_shared<Node<T>>(std::move(value));
  for (const auto& p : parents) n->requires_grad |= p->requires_grad;
  n->kind = kind;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// ---- topological walk ----

template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children; reverse for backprop
}

template <typename T>
void backward(const Var<T>& loss) {
  if (loss->value.numel() != 1) throw ContractError("backward: loss must be scalar");
  if (!loss->requires_grad) return;
  auto order = topo_order(loss);
  for (Node<T>* n : order) n->grad = Tensor<T>();
  loss->grad = Tensor<T>::full(loss->value.shape(), T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop && n->grad.numel() != 0) n->backprop(*n);
  }
}

// Gradients per parameter; parameters unreachable from the loss get zeros.
template <typename T>
std::vector<Tensor<T>> forward_backward(const Var<T>& loss, const std::vector<Var<T>>& params) {
  backward(loss);
  std::vector<Tensor<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    if (p->grad.numel() != 0)
      grads.push_back(p->grad);
    else
      grads.push_back(Tensor<T>(p->value.shape()));
  }
  return grads;
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a->value.require_same_shape(b->value, "add");
  Tensor<T> out = a->value;
  out.add_(b->value);
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    a->accumulate(n.grad);
    b->accumulate(n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a->value.require_same_shape(b->value, "sub");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    a->accumulate(n.grad);
    if (b->requires_grad) {
      auto& g = b->grad_buf();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  a->value.require_same_shape(b->value, "mul");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      auto& g = a->grad_buf();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buf();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(out[i] * s);
  return make_op<T>(std::move(out), {a}, [a, s](Node<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buf();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += static_cast<T>(n.grad[i] * s);
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double s) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(out[i] + s);
  return make_op<T>(std::move(out), {a}, [a](Node<T>& n) { a->accumulate(n.grad); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, -1.0);
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
  return make_op<T>(
      std::move(out), {a},
      [a](Node<T>& n) {
        if (!a->requires_grad) return;
        auto& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i)
          if (a->value[i] > T(0)) g[i] += n.grad[i];
      },
      OpKind::relu);
}

// tanh-form gelu: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))). The backward
// pass differentiates exactly this expression, so finite differences agree
// with it in either precision.
template <typename T>
void gelu_tanh_arg(const T* __restrict__ x, T* __restrict__ u, std::int64_t n) {
  constexpr T kBeta = T(0.7978845608028654);
  constexpr T kCubic = T(0.044715);
  for (std::int64_t i = 0; i < n; ++i) u[i] = kBeta * (x[i] + kCubic * x[i] * x[i] * x[i]);
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  const std::int64_t n = a->value.numel();
  Tensor<T> out(a->value.shape());
  thread_local std::vector<T> tbuf;
  if (static_cast<std::int64_t>(tbuf.size()) < n) tbuf.resize(static_cast<std::size_t>(n));
  const T* __restrict__ x = a->value.data();
  T* __restrict__ t = tbuf.data();
  gelu_tanh_arg(x, t, n);
  kern::vtanh(t, t, n);
  T* __restrict__ o = out.data();
  for (std::int64_t i = 0; i < n; ++i) o[i] = T(0.5) * x[i] * (T(1) + t[i]);
  return make_op<T>(std::move(out), {a}, [a, n](Node<T>& nd) {
    if (!a->requires_grad) return;
    constexpr T kBeta = T(0.7978845608028654);
    constexpr T kCubic = T(0.044715);
    if (static_cast<std::int64_t>(tbuf.size()) < n) tbuf.resize(static_cast<std::size_t>(n));
    const T* __restrict__ x = a->value.data();
    T* __restrict__ t = tbuf.data();
    gelu_tanh_arg(x, t, n);
    kern::vtanh(t, t, n);
    T* __restrict__ g = a->grad_buf().data();
    const T* __restrict__ gy = nd.grad.data();
    for (std::int64_t i = 0; i < n; ++i) {
      const T du = kBeta * (T(1) + T(3) * kCubic * x[i] * x[i]);
      g[i] += gy[i] * (T(0.5) * (T(1) + t[i]) + T(0.5) * x[i] * (T(1) - t[i] * t[i]) * du);
    }
  });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buf();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

template <typename T>
Var<T> log_(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buf();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / a->value[i];
  });
}

// ---- matrix products ----

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
    throw ContractError("matmul: bad shapes " + a->value.shape_str() + " x " + b->value.shape_str());
  const auto M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
  Tensor<T> out({M, N});
  kern::gemm_nn(M, N, K, a->value.data(), b->value.data(), out.data());
  return make_op<T>(std::move(out), {a, b}, [a, b, M, K, N](Node<T>& n) {
    if (a->requires_grad)
      kern::gemm_nt(M, K, N, n.grad.data(), b->value.data(), a->grad_buf().data(), true);
    if (b->requires_grad)
      kern::gemm_tn(K, N, M, a->value.data(), n.grad.data(), b->grad_buf().data(), true);
  });
}

// a (M,K) · b(N,K)ᵀ -> (M,N)
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(1))
    throw ContractError("matmul_nt: bad shapes " + a->value.shape_str() + " x " + b->value.shape_str());
  const auto M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(0);
  Tensor<T> out({M, N});
  kern::gemm_nt(M, N, K, a->value.data(), b->value.data(), out.data());
  return make_op<T>(std::move(out), {a, b}, [a, b, M, K, N](Node<T>& n) {
    if (a->requires_grad)
      kern::gemm_nn(M, K, N, n.grad.data(), b->value.data(), a->grad_buf().data(), true);
    if (b->requires_grad)
      kern::gemm_tn(N, K, M, n.grad.data(), a->value.data(), b->grad_buf().data(), true);
  });
}

// x (M,in) with weight (out,in) and optional bias (out) -> (M,out)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x->value.rank() != 2 || w->value.rank() != 2 || x->value.dim(1) != w->value.dim(1))
    throw ContractError("linear: bad shapes " + x->value.shape_str() + " x " + w->value.shape_str());
  const auto M = x->value.dim(0), in = x->value.dim(1), out_d = w->value.dim(0);
  const bool has_bias = b != nullptr;
  if (has_bias && b->value.numel() != out_d) throw ContractError("linear: bias size");
  Tensor<T> out({M, out_d});
  kern::gemm_nt(M, out_d, in, x->value.data(), w->value.data(), out.data());
  if (has_bias)
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < out_d; ++j) out.at(i, j) += b->value[j];
  std::vector<Var<T>> parents = has_bias ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op<T>(std::move(out), std::move(parents), [x, w, b, M, in, out_d, has_bias](Node<T>& n) {
    if (x->requires_grad)
      kern::gemm_nn(M, in, out_d, n.grad.data(), w->value.data(), x->grad_buf().data(), true);
    if (w->requires_grad)
      kern::gemm_tn(out_d, in, M, n.grad.data(), x->value.data(), w->grad_buf().data(), true);
    if (has_bias && b->requires_grad) {
      auto& g = b->grad_buf();
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < out_d; ++j) g[j] += n.grad.at(i, j);
    }
  });
}

template <typename T>
Var<T> linear_nobias(const Var<T>& x, const Var<T>& w) {
  return linear(x, w, Var<T>{});
}

// ---- row-wise reductions and normalizations ----

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  const auto M = x->value.dim(0), N = x->value.dim(1);
  Tensor<T> out({M, N});
  for (std::int64_t i = 0; i < M; ++i) {
    T mx = x->value.at(i, 0);
    for (std::int64_t j = 1; j < N; ++j) mx = std::max(mx, x->value.at(i, j));
    for (std::int64_t j = 0; j < N; ++j) out.at(i, j) = x->value.at(i, j) - mx;
  }
  kern::vexp(out.data(), out.data(), M * N);
  for (std::int64_t i = 0; i < M; ++i) {
    T sum = T(0);
    for (std::int64_t j = 0; j < N; ++j) sum += out.at(i, j);
    for (std::int64_t j = 0; j < N; ++j) out.at(i, j) /= sum;
  }
  return make_op<T>(std::move(out), {x}, [x, M, N](Node<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buf();
    for (std::int64_t i = 0; i < M; ++i) {
      T dot = T(0);
      for (std::int64_t j = 0; j < N; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
      for (std::int64_t j = 0; j < N; ++j)
        g.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& x) {
  const auto M = x->value.dim(0), N = x->value.dim(1);
  Tensor<T> out({M, N});
  thread_local std::vector<T> ebuf;
  if (static_cast<std::int64_t>(ebuf.size()) < M * N)
    ebuf.resize(static_cast<std::size_t>(M * N));
  for (std::int64_t i = 0; i < M; ++i) {
    T mx = x->value.at(i, 0);
    for (std::int64_t j = 1; j < N; ++j) mx = std::max(mx, x->value.at(i, j));
    for (std::int64_t j = 0; j < N; ++j) out.at(i, j) = x->value.at(i, j) - mx;
  }
  kern::vexp(out.data(), ebuf.data(), M * N);
  for (std::int64_t i = 0; i < M; ++i) {
    T sum = T(0);
    for (std::int64_t j = 0; j < N; ++j) sum += ebuf[static_cast<std::size_t>(i * N + j)];
    const T lg = std::log(sum);
    for (std::int64_t j = 0; j < N; ++j) out.at(i, j) -= lg;
  }
  return make_op<T>(std::move(out), {x}, [x, M, N](Node<T>& n) {
    if (!x->requires_grad) return;
    if (static_cast<std::int64_t>(ebuf.size()) < M * N)
      ebuf.resize(static_cast<std::size_t>(M * N));
    kern::vexp(n.value.data(), ebuf.data(), M * N);
    auto& g = x->grad_buf();
    for (std::int64_t i = 0; i < M; ++i) {
      T rowsum = T(0);
      for (std::int64_t j = 0; j < N; ++j) rowsum += n.grad.at(i, j);
      for (std::int64_t j = 0; j < N; ++j)
        g.at(i, j) += n.grad.at(i, j) - ebuf[static_cast<std::size_t>(i * N + j)] * rowsum;
    }
  });
}

template <typename T>
Var<T> layernorm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                      double eps = 1e-5) {
  const auto M = x->value.dim(0), N = x->value.dim(1);
  if (gamma->value.numel() != N || beta->value.numel() != N)
    throw ContractError("layernorm: gamma/beta size");
  Tensor<T> out({M, N});
  Tensor<T> xhat({M, N});
  Tensor<T> inv({M});
  for (std::int64_t i = 0; i < M; ++i) {
    T mu = T(0);
    for (std::int64_t j = 0; j < N; ++j) mu += x->value.at(i, j);
    mu /= static_cast<T>(N);
    T var = T(0);
    for (std::int64_t j = 0; j < N; ++j) {
      const T d = x->value.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<T>(N);
    const T iv = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv[i] = iv;
    for (std::int64_t j = 0; j < N; ++j) {
      const T h = (x->value.at(i, j) - mu) * iv;
      xhat.at(i, j) = h;
      out.at(i, j) = h * gamma->value[j] + beta->value[j];
    }
  }
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv), M, N](Node<T>& n) {
                      if (gamma->requires_grad) {
                        auto& gg = gamma->grad_buf();
                        for (std::int64_t i = 0; i < M; ++i)
                          for (std::int64_t j = 0; j < N; ++j)
                            gg[j] += n.grad.at(i, j) * xhat.at(i, j);
                      }
                      if (beta->requires_grad) {
                        auto& gb = beta->grad_buf();
                        for (std::int64_t i = 0; i < M; ++i)
                          for (std::int64_t j = 0; j < N; ++j) gb[j] += n.grad.at(i, j);
                      }
                      if (!x->requires_grad) return;
                      auto& gx = x->grad_buf();
                      for (std::int64_t i = 0; i < M; ++i) {
                        T s1 = T(0), s2 = T(0);
                        for (std::int64_t j = 0; j < N; ++j) {
                          const T gy = n.grad.at(i, j) * gamma->value[j];
                          s1 += gy;
                          s2 += gy * xhat.at(i, j);
                        }
                        s1 /= static_cast<T>(N);
                        s2 /= static_cast<T>(N);
                        for (std::int64_t j = 0; j < N; ++j) {
                          const T gy = n.grad.at(i, j) * gamma->value[j];
                          gx.at(i, j) += (gy - s1 - xhat.at(i, j) * s2) * inv[i];
                        }
                      }
                    });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T s = T(0);
  for (std::int64_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
  return make_op<T>(Tensor<T>::scalar(s), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buf();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x->value.numel()));
}

// (M,N) -> (1,N), mean over rows
template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  const auto M = x->value.dim(0), N = x->value.dim(1);
  if (M == 0) throw ContractError("mean_rows: empty");
  Tensor<T> out({1, N});
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t j = 0; j < N; ++j) out[j] += x->value.at(i, j);
  for (std::int64_t j = 0; j < N; ++j) out[j] /= static_cast<T>(M);
  return make_op<T>(std::move(out), {x}, [x, M, N](Node<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buf();
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < N; ++j) g.at(i, j) += n.grad[j] / static_cast<T>(M);
  });
}

// ---- structural ops ----

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<std::int64_t> shape) {
  Tensor<T> out(std::move(shape), x->value.vec());
  return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buf();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::int64_t> idx) {
  const auto N = x->value.dim(1);
  Tensor<T> out({static_cast<std::int64_t>(idx.size()), N});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x->value.dim(0)) throw ContractError("gather_rows: index out of range");
    std::memcpy(out.data() + r * N, x->value.data() + idx[r] * N,
                static_cast<std::size_t>(N) * sizeof(T));
  }
  return make_op<T>(std::move(out), {x}, [x, idx = std::move(idx), N](Node<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buf();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      T* dst = g.data() + idx[r] * N;
      const T* src = n.grad.data() + static_cast<std::int64_t>(r) * N;
      for (std::int64_t j = 0; j < N; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::int64_t c0, std::int64_t c1) {
  const auto M = x->value.dim(0), N = x->value.dim(1);
  if (c0 < 0 || c1 > N || c0 >= c1) throw ContractError("slice_cols: bad range");
  const auto W = c1 - c0;
  Tensor<T> out({M, W});
  for (std::int64_t i = 0; i < M; ++i)
    std::memcpy(out.data() + i * W, x->value.data() + i * N + c0,
                static_cast<std::size_t>(W) * sizeof(T));
  return make_op<T>(std::move(out), {x}, [x, c0, M, N, W](Node<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buf();
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < W; ++j) g.at(i, c0 + j) += n.grad.at(i, j);
  });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  const auto M = a->value.dim(0);
  if (b->value.dim(0) != M) throw ContractError("concat_cols: row mismatch");
  const auto Na = a->value.dim(1), Nb = b->value.dim(1);
  Tensor<T> out({M, Na + Nb});
  for (std::int64_t i = 0; i < M; ++i) {
    std::memcpy(out.data() + i * (Na + Nb), a->value.data() + i * Na,
                static_cast<std::size_t>(Na) * sizeof(T));
    std::memcpy(out.data() + i * (Na + Nb) + Na, b->value.data() + i * Nb,
                static_cast<std::size_t>(Nb) * sizeof(T));
  }
  return make_op<T>(std::move(out), {a, b}, [a, b, M, Na, Nb](Node<T>& n) {
    if (a->requires_grad) {
      auto& g = a->grad_buf();
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < Na; ++j) g.at(i, j) += n.grad.at(i, j);
    }
    if (b->requires_grad) {
      auto& g = b->grad_buf();
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < Nb; ++j) g.at(i, j) += n.grad.at(i, Na + j);
    }
  });
}

template <typename T>
Var<T> pad_rows(const Var<T>& x, std::int64_t top, std::int64_t bottom) {
  const auto M = x->value.dim(0), N = x->value.dim(1);
  Tensor<T> out({M + top + bottom, N});
  std::memcpy(out.data() + top * N, x->value.data(), static_cast<std::size_t>(M * N) * sizeof(T));
  return make_op<T>(std::move(out), {x}, [x, top, M, N](Node<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buf();
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < N; ++j) g.at(i, j) += n.grad.at(top + i, j);
  });
}

// Replace masked rows with a learned embedding row (1,N).
template <typename T>
Var<T> mask_rows(const Var<T>& x, const std::vector<std::uint8_t>& mask, const Var<T>& embed) {
  const auto M = x->value.dim(0), N = x->value.dim(1);
  if (static_cast<std::int64_t>(mask.size()) != M) throw ContractError("mask_rows: mask length");
  if (embed->value.numel() != N) throw ContractError("mask_rows: embed size");
  Tensor<T> out = x->value;
  for (std::int64_t i = 0; i < M; ++i)
    if (mask[static_cast<std::size_t>(i)])
      std::memcpy(out.data() + i * N, embed->value.data(), static_cast<std::size_t>(N) * sizeof(T));
  return make_op<T>(std::move(out), {x, embed}, [x, embed, mask, M, N](Node<T>& n) {
    if (x->requires_grad) {
      auto& g = x->grad_buf();
      for (std::int64_t i = 0; i < M; ++i)
        if (!mask[static_cast<std::size_t>(i)])
          for (std::int64_t j = 0; j < N; ++j) g.at(i, j) += n.grad.at(i, j);
    }
    if (embed->requires_grad) {
      auto& g = embed->grad_buf();
      for (std::int64_t i = 0; i < M; ++i)
        if (mask[static_cast<std::size_t>(i)])
          for (std::int64_t j = 0; j < N; ++j) g[j] += n.grad.at(i, j);
    }
  });
}

// Forward takes the given hard value, backward passes gradients through to
// the soft input unchanged.
template <typename T>
Var<T> straight_through(const Var<T>& soft, Tensor<T> hard) {
  soft->value.require_same_shape(hard, "straight_through");
  return make_op<T>(std::move(hard), {soft}, [soft](Node<T>& n) { soft->accumulate(n.grad); });
}

// Multiply a tensor by one element of a vector variable.
template <typename T>
Var<T> scale_by_element(const Var<T>& x, const Var<T>& w, std::int64_t idx) {
  if (idx < 0 || idx >= w->value.numel()) throw ContractError("scale_by_element: index");
  const T s = w->value[idx];
  Tensor<T> out = x->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_op<T>(std::move(out), {x, w}, [x, w, idx, s](Node<T>& n) {
    if (x->requires_grad) {
      auto& g = x->grad_buf();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
    }
    if (w->requires_grad) {
      auto& g = w->grad_buf();
      T dot = T(0);
      for (std::int64_t i = 0; i < n.grad.numel(); ++i) dot += n.grad[i] * x->value[i];
      g[idx] += dot;
    }
  });
}

// Row-wise cosine similarity of two (M,N) inputs -> (M,1).
template <typename T>
Var<T> cosine_rows(const Var<T>& a, const Var<T>& b) {
  a->value.require_same_shape(b->value, "cosine_rows");
  const auto M = a->value.dim(0), N = a->value.dim(1);
  Tensor<T> out({M, 1});
  Tensor<T> na2({M}), nb2({M}), den({M});
  for (std::int64_t i = 0; i < M; ++i) {
    T s = T(0), sa = T(0), sb = T(0);
    const T* pa = a->value.data() + i * N;
    const T* pb = b->value.data() + i * N;
    for (std::int64_t j = 0; j < N; ++j) {
      s += pa[j] * pb[j];
      sa += pa[j] * pa[j];
      sb += pb[j] * pb[j];
    }
    na2[i] = std::max(sa, static_cast<T>(1e-24));
    nb2[i] = std::max(sb, static_cast<T>(1e-24));
    den[i] = std::sqrt(na2[i] * nb2[i]);
    out[i] = s / den[i];
  }
  return make_op<T>(std::move(out), {a, b},
                    [a, b, na2 = std::move(na2), nb2 = std::move(nb2), den = std::move(den), M,
                     N](Node<T>& n) {
                      for (std::int64_t i = 0; i < M; ++i) {
                        const T go = n.grad[i];
                        if (go == T(0)) continue;
                        const T c = n.value[i];
                        const T* pa = a->value.data() + i * N;
                        const T* pb = b->value.data() + i * N;
                        if (a->requires_grad) {
                          T* g = a->grad_buf().data() + i * N;
                          for (std::int64_t j = 0; j < N; ++j)
                            g[j] += go * (pb[j] / den[i] - c * pa[j] / na2[i]);
                        }
                        if (b->requires_grad) {
                          T* g = b->grad_buf().data() + i * N;
                          for (std::int64_t j = 0; j < N; ++j)
                            g[j] += go * (pa[j] / den[i] - c * pb[j] / nb2[i]);
                        }
                      }
                    });
}

// Valid 1-D convolution on a time-major (L, Cin) signal.
// Weight is (Cout, K·Cin) with the window flattened row-major, bias (Cout).
template <typename T>
Var<T> conv1d_valid(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::int64_t K,
                    std::int64_t stride) {
  const auto L = x->value.dim(0), Cin = x->value.dim(1);
  const auto Cout = w->value.dim(0);
  if (w->value.dim(1) != K * Cin) throw ContractError("conv1d: weight shape");
  if (L < K) throw ContractError("conv1d: input shorter than kernel");
  const std::int64_t Lout = (L - K) / stride + 1;
  Tensor<T> cols({Lout, K * Cin});
  kern::im2col_rows(L, Cin, K, stride, x->value.data(), Lout, cols.data());
  Tensor<T> out({Lout, Cout});
  kern::gemm_nt(Lout, Cout, K * Cin, cols.data(), w->value.data(), out.data());
  if (b) {
    if (b->value.numel() != Cout) throw ContractError("conv1d: bias size");
    for (std::int64_t t = 0; t < Lout; ++t)
      for (std::int64_t c = 0; c < Cout; ++c) out.at(t, c) += b->value[c];
  }
  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op<T>(std::move(out), std::move(parents),
                    [x, w, b, cols = std::move(cols), L, Cin, Cout, K, stride, Lout](Node<T>& n) {
                      if (w->requires_grad)
                        kern::gemm_tn(Cout, K * Cin, Lout, n.grad.data(), cols.data(),
                                      w->grad_buf().data(), true);
                      if (b && b->requires_grad) {
                        auto& g = b->grad_buf();
                        for (std::int64_t t = 0; t < Lout; ++t)
                          for (std::int64_t c = 0; c < Cout; ++c) g[c] += n.grad.at(t, c);
                      }
                      if (x->requires_grad) {
                        Tensor<T> dcols({Lout, K * Cin});
                        kern::gemm_nn(Lout, K * Cin, Cout, n.grad.data(), w->value.data(),
                                      dcols.data());
                        kern::col2im_rows_add(L, Cin, K, stride, dcols.data(), Lout,
                                              x->grad_buf().data());
                      }
                    });
}

// ---- gradient checking ----

// Smallest |input| seen by any ReLU in the graph; +inf when none. Used to
// reject finite-difference points that straddle the kink.
template <typename T>
double relu_min_margin(const Var<T>& root) {
  double margin = std::numeric_limits<double>::infinity();
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (n->kind == OpKind::relu && !n->parents.empty()) {
      const auto& in = n->parents[0]->value;
      for (std::int64_t i = 0; i < in.numel(); ++i)
        margin = std::min(margin, static_cast<double>(std::abs(in[i])));
    }
    for (const auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  return margin;
}

template <typename T>
struct GradCheckReport {
  double max_rel_err = 0.0;
  double relu_margin = std::numeric_limits<double>::infinity();
};

// Central finite differences against reverse-mode gradients. `build` must
// construct the scalar loss from the given parameter variables; it is called
// repeatedly at perturbed points.
template <typename T>
GradCheckReport<T> grad_check(
    const std::function<Var<T>(const std::vector<Var<T>>&)>& build,
    const std::vector<Tensor<T>>& points, double eps) {
  std::vector<Var<T>> params;
  params.reserve(points.size());
  for (const auto& p : points) params.push_back(param(p));
  Var<T> loss = build(params);
  GradCheckReport<T> rep;
  rep.relu_margin = relu_min_margin(loss);
  auto grads = forward_backward(loss, params);

  auto eval = [&](const std::vector<Tensor<T>>& pts) -> double {
    std::vector<Var<T>> vs;
    vs.reserve(pts.size());
    for (const auto& p : pts) vs.push_back(constant(p));
    Var<T> l = build(vs);
    if (l->value.numel() != 1) throw ContractError("grad_check: non-scalar loss");
    return static_cast<double>(l->value[0]);
  };

  std::vector<Tensor<T>> work = points;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    for (std::int64_t i = 0; i < points[pi].numel(); ++i) {
      const T saved = work[pi][i];
      work[pi][i] = saved + static_cast<T>(eps);
      const double fp = eval(work);
      work[pi][i] = saved - static_cast<T>(eps);
      const double fm = eval(work);
      work[pi][i] = saved;
      const double g_fd = (fp - fm) / (2.0 * eps);
      const double g_ad = static_cast<double>(grads[pi][i]);
      const double denom = std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(g_ad - g_fd) / denom);
    }
  }
  return rep;
}

}  // namespace egosc::ad
