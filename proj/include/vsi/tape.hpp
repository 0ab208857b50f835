#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vsi/error.hpp"
#include "vsi/tensor.hpp"

namespace vsi {

using GradMap = std::map<std::string, Tensor>;

// Reverse-mode autodiff over an append-only tape. Ops can only consume nodes
// that already exist, so tape order is a topological order and the backward
// pass walks it in exact reverse. One tape per forward pass; tapes are
// single-threaded, independent tapes may run concurrently.
class Tape {
public:
    using Node = int;

    static constexpr double kGeluK0 = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kGeluK1 = 0.044715;

    // Leaf holding a copy of `v` (masks, pooling weights, inputs).
    Node constant(Tensor v) {
        check_output(v, "constant");
        return push(Rec{std::move(v), nullptr, {}, {}});
    }

    // Named parameter leaf. The tensor is referenced, not copied; it must
    // outlive the tape and stay unchanged until backward() is done.
    // Registering the same name twice returns the same node.
    Node param(const std::string& name, const Tensor& value) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            if (&value != rec_[static_cast<std::size_t>(it->second)].external)
                throw Error("param '" + name + "' re-registered with a different tensor");
            return it->second;
        }
        if (!value.all_finite()) throw NumericError("param '" + name + "' contains NaN/Inf");
        Node n = push(Rec{{}, &value, name, {}});
        params_.emplace(name, n);
        return n;
    }

    const Tensor& value(Node n) const { return rec_[static_cast<std::size_t>(n)].val(); }

    Node matmul(Node a, Node b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
            throw ShapeError("matmul shape mismatch: " + A.shape_str() + " x " + B.shape_str());
        const int m = A.rows(), k = A.cols(), n = B.cols();
        Tensor C = Tensor::zeros({m, n});
        for (int i = 0; i < m; ++i) {
            const double* arow = &A.data[static_cast<std::size_t>(i) * k];
            double* crow = &C.data[static_cast<std::size_t>(i) * n];
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = &B.data[static_cast<std::size_t>(kk) * n];
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
        return emit(std::move(C), "matmul", [a, b, m, k, n](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            const Tensor& A = t.value(a);
            const Tensor& B = t.value(b);
            Tensor& dA = t.grad_mut(a);
            for (int i = 0; i < m; ++i) {
                const double* grow = &G.data[static_cast<std::size_t>(i) * n];
                double* darow = &dA.data[static_cast<std::size_t>(i) * k];
                for (int kk = 0; kk < k; ++kk) {
                    const double* brow = &B.data[static_cast<std::size_t>(kk) * n];
                    double s = 0.0;
                    for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                    darow[kk] += s;
                }
            }
            Tensor& dB = t.grad_mut(b);
            for (int i = 0; i < m; ++i) {
                const double* arow = &A.data[static_cast<std::size_t>(i) * k];
                const double* grow = &G.data[static_cast<std::size_t>(i) * n];
                for (int kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    double* dbrow = &dB.data[static_cast<std::size_t>(kk) * n];
                    for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        });
    }

    Node add(Node a, Node b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw ShapeError("add shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
        return emit(std::move(C), "add", [a, b](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            Tensor& dA = t.grad_mut(a);
            for (std::size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
            Tensor& dB = t.grad_mut(b);
            for (std::size_t i = 0; i < G.size(); ++i) dB.data[i] += G.data[i];
        });
    }

    // a is {m,n}, bias is {n}; bias added to every row.
    Node add_row_bias(Node a, Node bias) {
        const Tensor& A = value(a);
        const Tensor& B = value(bias);
        if (A.rank() != 2 || B.rank() != 1 || B.dim(0) != A.cols())
            throw ShapeError("add_row_bias shape mismatch: " + A.shape_str() + " + " + B.shape_str());
        const int m = A.rows(), n = A.cols();
        Tensor C = A;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) C.data[static_cast<std::size_t>(i) * n + j] += B.data[j];
        return emit(std::move(C), "add_row_bias", [a, bias, m, n](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            Tensor& dA = t.grad_mut(a);
            for (std::size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
            Tensor& dB = t.grad_mut(bias);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) dB.data[j] += G.data[static_cast<std::size_t>(i) * n + j];
        });
    }

    Node hadamard(Node a, Node b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw ShapeError("hadamard shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
        return emit(std::move(C), "hadamard", [a, b](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            const Tensor& A = t.value(a);
            const Tensor& B = t.value(b);
            Tensor& dA = t.grad_mut(a);
            for (std::size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i] * B.data[i];
            Tensor& dB = t.grad_mut(b);
            for (std::size_t i = 0; i < G.size(); ++i) dB.data[i] += G.data[i] * A.data[i];
        });
    }

    Node scale(Node a, double c) {
        Tensor C = value(a);
        for (double& v : C.data) v *= c;
        return emit(std::move(C), "scale", [a, c](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            Tensor& dA = t.grad_mut(a);
            for (std::size_t i = 0; i < G.size(); ++i) dA.data[i] += c * G.data[i];
        });
    }

    Node relu(Node a) {
        Tensor C = value(a);
        for (double& v : C.data) v = v > 0.0 ? v : 0.0;
        return emit(std::move(C), "relu", [a](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            const Tensor& A = t.value(a);
            Tensor& dA = t.grad_mut(a);
            for (std::size_t i = 0; i < G.size(); ++i)
                if (A.data[i] > 0.0) dA.data[i] += G.data[i];
        });
    }

    // tanh approximation with fixed constants:
    //   gelu(x) = 0.5 x (1 + tanh(k0 (x + k1 x^3))), k0 = sqrt(2/pi), k1 = 0.044715
    Node gelu(Node a) {
        Tensor C = value(a);
        for (double& v : C.data) v = gelu_scalar(v);
        return emit(std::move(C), "gelu", [a](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            const Tensor& A = t.value(a);
            Tensor& dA = t.grad_mut(a);
            for (std::size_t i = 0; i < G.size(); ++i)
                dA.data[i] += gelu_derivative(A.data[i]) * G.data[i];
        });
    }

    static double gelu_scalar(double x) {
        const double u = kGeluK0 * (x + kGeluK1 * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
    }

    static double gelu_derivative(double x) {
        const double u = kGeluK0 * (x + kGeluK1 * x * x * x);
        const double th = std::tanh(u);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluK0 * (1.0 + 3.0 * kGeluK1 * x * x);
    }

    Node softmax_rows(Node a) { return softmax_rows_impl(a, nullptr); }

    // mask has the same shape; entries are 0 or 1, 0 = excluded. Excluded
    // entries come out exactly 0; each row needs at least one kept entry.
    Node softmax_rows(Node a, const Tensor& mask) { return softmax_rows_impl(a, &mask); }

    // Row-wise layer norm with learned gain/bias: y = (x - mu)/sqrt(var + eps) * gamma + beta.
    Node layer_norm(Node x, Node gamma, Node beta, double eps = 1e-6) {
        const Tensor& X = value(x);
        const Tensor& Ga = value(gamma);
        const Tensor& Be = value(beta);
        if (X.rank() != 2 || Ga.rank() != 1 || Be.rank() != 1 || Ga.dim(0) != X.cols() ||
            Be.dim(0) != X.cols())
            throw ShapeError("layer_norm shape mismatch");
        const int m = X.rows(), n = X.cols();
        Tensor Y = Tensor::zeros({m, n});
        std::vector<double> inv_sigma(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
            const double* xr = &X.data[static_cast<std::size_t>(i) * n];
            double mu = 0.0;
            for (int j = 0; j < n; ++j) mu += xr[j];
            mu /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
            var /= n;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_sigma[static_cast<std::size_t>(i)] = is;
            double* yr = &Y.data[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j) yr[j] = (xr[j] - mu) * is * Ga.data[j] + Be.data[j];
        }
        return emit(std::move(Y), "layer_norm",
                    [x, gamma, beta, m, n, inv_sigma = std::move(inv_sigma)](Tape& t, Node out) {
                        const Tensor& G = t.grad(out);
                        const Tensor& X = t.value(x);
                        const Tensor& Ga = t.value(gamma);
                        Tensor& dX = t.grad_mut(x);
                        Tensor& dGa = t.grad_mut(gamma);
                        Tensor& dBe = t.grad_mut(beta);
                        std::vector<double> xhat(static_cast<std::size_t>(n));
                        std::vector<double> h(static_cast<std::size_t>(n));
                        for (int i = 0; i < m; ++i) {
                            const double* xr = &X.data[static_cast<std::size_t>(i) * n];
                            const double* gr = &G.data[static_cast<std::size_t>(i) * n];
                            double* dxr = &dX.data[static_cast<std::size_t>(i) * n];
                            const double is = inv_sigma[static_cast<std::size_t>(i)];
                            double mu = 0.0;
                            for (int j = 0; j < n; ++j) mu += xr[j];
                            mu /= n;
                            double mean_h = 0.0, mean_hx = 0.0;
                            for (int j = 0; j < n; ++j) {
                                xhat[static_cast<std::size_t>(j)] = (xr[j] - mu) * is;
                                h[static_cast<std::size_t>(j)] = gr[j] * Ga.data[j];
                                mean_h += h[static_cast<std::size_t>(j)];
                                mean_hx += h[static_cast<std::size_t>(j)] * xhat[static_cast<std::size_t>(j)];
                                dGa.data[j] += gr[j] * xhat[static_cast<std::size_t>(j)];
                                dBe.data[j] += gr[j];
                            }
                            mean_h /= n;
                            mean_hx /= n;
                            for (int j = 0; j < n; ++j)
                                dxr[j] += (h[static_cast<std::size_t>(j)] - mean_h -
                                           xhat[static_cast<std::size_t>(j)] * mean_hx) *
                                          is;
                        }
                    });
    }

    Node concat_rows(const std::vector<Node>& parts) {
        if (parts.empty()) throw ShapeError("concat_rows needs at least one input");
        const int n = value(parts[0]).cols();
        int total = 0;
        for (Node p : parts) {
            const Tensor& T = value(p);
            if (T.rank() != 2 || T.cols() != n) throw ShapeError("concat_rows column mismatch");
            total += T.rows();
        }
        Tensor C = Tensor::zeros({total, n});
        std::size_t off = 0;
        for (Node p : parts) {
            const Tensor& T = value(p);
            std::copy(T.data.begin(), T.data.end(), C.data.begin() + static_cast<std::ptrdiff_t>(off));
            off += T.size();
        }
        return emit(std::move(C), "concat_rows", [parts](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            std::size_t off = 0;
            for (Node p : parts) {
                Tensor& dP = t.grad_mut(p);
                for (std::size_t i = 0; i < dP.size(); ++i) dP.data[i] += G.data[off + i];
                off += dP.size();
            }
        });
    }

    // Rows [r0, r1) of a rank-2 tensor.
    Node slice_rows(Node a, int r0, int r1) {
        const Tensor& A = value(a);
        if (A.rank() != 2 || r0 < 0 || r1 <= r0 || r1 > A.rows())
            throw ShapeError("slice_rows bad range");
        const int n = A.cols();
        Tensor C = Tensor::zeros({r1 - r0, n});
        std::copy(A.data.begin() + static_cast<std::ptrdiff_t>(r0) * n,
                  A.data.begin() + static_cast<std::ptrdiff_t>(r1) * n, C.data.begin());
        return emit(std::move(C), "slice_rows", [a, r0, n](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            Tensor& dA = t.grad_mut(a);
            const std::size_t base = static_cast<std::size_t>(r0) * n;
            for (std::size_t i = 0; i < G.size(); ++i) dA.data[base + i] += G.data[i];
        });
    }

    Node concat_cols(const std::vector<Node>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols needs at least one input");
        const int m = value(parts[0]).rows();
        int total = 0;
        for (Node p : parts) {
            const Tensor& T = value(p);
            if (T.rank() != 2 || T.rows() != m) throw ShapeError("concat_cols row mismatch");
            total += T.cols();
        }
        Tensor C = Tensor::zeros({m, total});
        int coff = 0;
        for (Node p : parts) {
            const Tensor& T = value(p);
            const int n = T.cols();
            for (int i = 0; i < m; ++i)
                std::copy(T.data.begin() + static_cast<std::ptrdiff_t>(i) * n,
                          T.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * n,
                          C.data.begin() + static_cast<std::ptrdiff_t>(i) * total + coff);
            coff += n;
        }
        return emit(std::move(C), "concat_cols", [parts, m, total](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            int coff = 0;
            for (Node p : parts) {
                Tensor& dP = t.grad_mut(p);
                const int n = dP.cols();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        dP.data[static_cast<std::size_t>(i) * n + j] +=
                            G.data[static_cast<std::size_t>(i) * total + coff + j];
                coff += n;
            }
        });
    }

    // Columns [c0, c1) of a rank-2 tensor.
    Node slice_cols(Node a, int c0, int c1) {
        const Tensor& A = value(a);
        if (A.rank() != 2 || c0 < 0 || c1 <= c0 || c1 > A.cols())
            throw ShapeError("slice_cols bad range");
        const int m = A.rows(), n = A.cols(), w = c1 - c0;
        Tensor C = Tensor::zeros({m, w});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                C.data[static_cast<std::size_t>(i) * w + j] =
                    A.data[static_cast<std::size_t>(i) * n + c0 + j];
        return emit(std::move(C), "slice_cols", [a, c0, m, n, w](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            Tensor& dA = t.grad_mut(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    dA.data[static_cast<std::size_t>(i) * n + c0 + j] +=
                        G.data[static_cast<std::size_t>(i) * w + j];
        });
    }

    Node transpose(Node a) {
        const Tensor& A = value(a);
        if (A.rank() != 2) throw ShapeError("transpose needs rank-2");
        const int m = A.rows(), n = A.cols();
        Tensor C = Tensor::zeros({n, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                C.data[static_cast<std::size_t>(j) * m + i] = A.data[static_cast<std::size_t>(i) * n + j];
        return emit(std::move(C), "transpose", [a, m, n](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            Tensor& dA = t.grad_mut(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dA.data[static_cast<std::size_t>(i) * n + j] +=
                        G.data[static_cast<std::size_t>(j) * m + i];
        });
    }

    // Gather rows of `table` ({V, d}) by token id; backward scatter-adds.
    Node embed(Node table, std::vector<int> ids) {
        const Tensor& T = value(table);
        if (T.rank() != 2) throw ShapeError("embed table must be rank-2");
        const int V = T.rows(), d = T.cols();
        for (int id : ids)
            if (id < 0 || id >= V) throw ShapeError("embed id out of range");
        const int L = static_cast<int>(ids.size());
        Tensor C = Tensor::zeros({L, d});
        for (int i = 0; i < L; ++i)
            std::copy(T.data.begin() + static_cast<std::ptrdiff_t>(ids[static_cast<std::size_t>(i)]) * d,
                      T.data.begin() + static_cast<std::ptrdiff_t>(ids[static_cast<std::size_t>(i)] + 1) * d,
                      C.data.begin() + static_cast<std::ptrdiff_t>(i) * d);
        return emit(std::move(C), "embed", [table, ids = std::move(ids), d](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            Tensor& dT = t.grad_mut(table);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::size_t dst = static_cast<std::size_t>(ids[i]) * d;
                const std::size_t src = i * static_cast<std::size_t>(d);
                for (int j = 0; j < d; ++j) dT.data[dst + j] += G.data[src + j];
            }
        });
    }

    // Sum of all entries -> scalar {1}.
    Node sum(Node a) {
        const Tensor& A = value(a);
        double s = 0.0;
        for (double v : A.data) s += v;
        return emit(Tensor::scalar(s), "sum", [a](Tape& t, Node out) {
            const double g = t.grad(out).data[0];
            Tensor& dA = t.grad_mut(a);
            for (double& v : dA.data) v += g;
        });
    }

    // -log softmax(logits)[label], numerically stabilized. logits {C} or {1,C}.
    Node softmax_cross_entropy(Node logits, int label) {
        const Tensor& X = value(logits);
        const int C = X.rank() == 2 ? X.cols() : X.dim(0);
        if ((X.rank() == 2 && X.rows() != 1) || X.rank() > 2)
            throw ShapeError("softmax_cross_entropy expects a single logit row");
        if (label < 0 || label >= C) throw Error("label out of range");
        double mx = X.data[0];
        for (double v : X.data) mx = std::max(mx, v);
        double se = 0.0;
        for (double v : X.data) se += std::exp(v - mx);
        const double loss = std::log(se) - (X.data[static_cast<std::size_t>(label)] - mx);
        return emit(Tensor::scalar(loss), "softmax_cross_entropy",
                    [logits, label, mx, se](Tape& t, Node out) {
                        const double g = t.grad(out).data[0];
                        const Tensor& X = t.value(logits);
                        Tensor& dX = t.grad_mut(logits);
                        for (std::size_t i = 0; i < X.size(); ++i) {
                            const double p = std::exp(X.data[i] - mx) / se;
                            dX.data[i] += g * (p - (static_cast<int>(i) == label ? 1.0 : 0.0));
                        }
                    });
    }

    // Run the backward pass from a scalar loss. Returns gradients for every
    // parameter registered on this tape; parameters the loss does not reach
    // get zeros. May be called once per tape.
    GradMap backward(Node loss) {
        const Tensor& L = value(loss);
        if (L.size() != 1) throw ShapeError("backward requires a scalar loss, got " + L.shape_str());
        grads_.clear();
        grads_.reserve(rec_.size());
        for (const Rec& r : rec_) grads_.push_back(Tensor::zeros(r.val().shape));
        grads_[static_cast<std::size_t>(loss)].data[0] = 1.0;
        for (int i = loss; i >= 0; --i) {
            const Rec& r = rec_[static_cast<std::size_t>(i)];
            if (r.backprop) r.backprop(*this, i);
        }
        GradMap out;
        for (const auto& [name, node] : params_)
            out.emplace(name, grads_[static_cast<std::size_t>(node)]);
        return out;
    }

    const Tensor& grad(Node n) const { return grads_[static_cast<std::size_t>(n)]; }

private:
    struct Rec {
        Tensor owned;
        const Tensor* external = nullptr;
        std::string param_name;
        std::function<void(Tape&, Node)> backprop;

        const Tensor& val() const { return external ? *external : owned; }
    };

    Tensor& grad_mut(Node n) { return grads_[static_cast<std::size_t>(n)]; }

    Node push(Rec r) {
        rec_.push_back(std::move(r));
        return static_cast<Node>(rec_.size() - 1);
    }

    static void check_output(const Tensor& t, const char* op) {
        if (!t.all_finite()) throw NumericError(std::string(op) + " produced NaN/Inf");
    }

    Node emit(Tensor v, const char* op, std::function<void(Tape&, Node)> bp) {
        check_output(v, op);
        return push(Rec{std::move(v), nullptr, {}, std::move(bp)});
    }

    Node softmax_rows_impl(Node a, const Tensor* mask) {
        const Tensor& A = value(a);
        if (A.rank() != 2) throw ShapeError("softmax_rows needs rank-2");
        if (mask) {
            if (!mask->same_shape(A)) throw ShapeError("softmax mask shape mismatch");
            for (double v : mask->data)
                if (v != 0.0 && v != 1.0) throw Error("softmax mask entries must be 0 or 1");
        }
        const int m = A.rows(), n = A.cols();
        Tensor Y = Tensor::zeros({m, n});
        std::vector<double> keep;
        if (mask) keep = mask->data;
        for (int i = 0; i < m; ++i) {
            const double* xr = &A.data[static_cast<std::size_t>(i) * n];
            const double* kr = mask ? &keep[static_cast<std::size_t>(i) * n] : nullptr;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j)
                if (!kr || kr[j] != 0.0) mx = std::max(mx, xr[j]);
            if (!std::isfinite(mx)) throw MaskError("softmax row fully masked");
            double se = 0.0;
            double* yr = &Y.data[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j) {
                if (!kr || kr[j] != 0.0) {
                    yr[j] = std::exp(xr[j] - mx);
                    se += yr[j];
                }
            }
            for (int j = 0; j < n; ++j) yr[j] /= se;
        }
        return emit(std::move(Y), "softmax_rows", [a, m, n](Tape& t, Node out) {
            const Tensor& G = t.grad(out);
            const Tensor& Y = t.value(out);
            Tensor& dA = t.grad_mut(a);
            for (int i = 0; i < m; ++i) {
                const double* gr = &G.data[static_cast<std::size_t>(i) * n];
                const double* yr = &Y.data[static_cast<std::size_t>(i) * n];
                double dotv = 0.0;
                for (int j = 0; j < n; ++j) dotv += gr[j] * yr[j];
                double* dar = &dA.data[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) dar[j] += yr[j] * (gr[j] - dotv);
            }
        });
    }

    std::vector<Rec> rec_;
    std::vector<Tensor> grads_;
    std::unordered_map<std::string, Node> params_;
};

}  // namespace vsi
