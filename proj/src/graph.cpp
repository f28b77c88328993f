#include "graph.hpp"

#include <Eigen/Core>

#include <cmath>
#include <utility>

namespace motlab::nn {

namespace {
template <class T>
using MatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using MutMatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}  // namespace

Var Graph::leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), grads_enabled_ && requires_grad, nullptr);
}

Var Graph::scalar(double v, Dtype dt) { return constant(Tensor::full({1}, v, dt)); }

Graph::Node& Graph::node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
const Graph::Node& Graph::node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor::zeros(n.value.shape(), n.value.dtype());
    return n.grad;
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Graph::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape(), n.value.dtype());
    return n.grad;
}

void Graph::accumulate(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.empty())
        n.grad = g;
    else
        add_inplace(n.grad, g);
}

void Graph::accumulate_move(int id, Tensor&& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.empty())
        n.grad = std::move(g);
    else
        add_inplace(n.grad, g);
}

bool Graph::want_grad(std::initializer_list<Var> parents) const {
    if (!grads_enabled_) return false;
    for (Var p : parents)
        if (node(p).requires_grad) return true;
    return false;
}

Var Graph::push(Tensor value, bool requires_grad, std::function<void()> backward_fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad,
                          requires_grad ? std::move(backward_fn) : nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::backward(Var loss) {
    Node& ln = node(loss);
    if (ln.value.numel() != 1)
        throw ConfigError("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
    if (!std::isfinite(ln.value.at(0)))
        throw NumericError("backward: loss is not finite");
    ln.grad = Tensor::full({1}, 1.0, ln.value.dtype());
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->requires_grad && !it->grad.empty() && it->backward_fn) it->backward_fn();
    }
}

// ---------------------------------------------------------------------------

Var Graph::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    Tensor out = motlab::matmul(value(a), value(b), trans_a, trans_b);
    const bool rg = want_grad({a, b});
    Var o{static_cast<int>(nodes_.size())};
    const MacCategory cat = macs::current_category();
    return push(std::move(out), rg, [this, a, b, o, trans_a, trans_b, cat] {
        MacScope ms(cat);
        const Tensor& dc = grad_buf(o.id);
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (node(a).requires_grad) {
            Tensor da;
            if (!trans_a && !trans_b) da = motlab::matmul(dc, bv, false, true);
            else if (!trans_a && trans_b) da = motlab::matmul(dc, bv, false, false);
            else if (trans_a && !trans_b) da = motlab::matmul(bv, dc, false, true);
            else da = motlab::matmul(bv, dc, true, true);
            accumulate_move(a.id, std::move(da));
        }
        if (node(b).requires_grad) {
            Tensor db;
            if (!trans_a && !trans_b) db = motlab::matmul(av, dc, true, false);
            else if (!trans_a && trans_b) db = motlab::matmul(dc, av, true, false);
            else if (trans_a && !trans_b) db = motlab::matmul(av, dc, false, false);
            else db = motlab::matmul(dc, av, true, true);
            accumulate_move(b.id, std::move(db));
        }
    });
}

Var Graph::add(Var a, Var b) {
    Tensor out = motlab::add(value(a), value(b));
    const bool rg = want_grad({a, b});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, b, o] {
        const Tensor& dc = grad_buf(o.id);
        accumulate(a.id, dc);
        accumulate(b.id, dc);
    });
}

Var Graph::sub(Var a, Var b) {
    Tensor out = motlab::sub(value(a), value(b));
    const bool rg = want_grad({a, b});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, b, o] {
        const Tensor& dc = grad_buf(o.id);
        accumulate(a.id, dc);
        if (node(b).requires_grad) accumulate_move(b.id, motlab::scale(dc, -1.0));
    });
}

Var Graph::mul(Var a, Var b) {
    Tensor out = motlab::mul(value(a), value(b));
    const bool rg = want_grad({a, b});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, b, o] {
        const Tensor& dc = grad_buf(o.id);
        if (node(a).requires_grad) accumulate_move(a.id, motlab::mul(dc, value(b)));
        if (node(b).requires_grad) accumulate_move(b.id, motlab::mul(dc, value(a)));
    });
}

Var Graph::mul_const(Var a, Tensor c) {
    Tensor out = motlab::mul(value(a), c);
    const bool rg = want_grad({a});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, o, c = std::move(c)] {
        accumulate_move(a.id, motlab::mul(grad_buf(o.id), c));
    });
}

Var Graph::add_const(Var a, Tensor c) {
    Tensor out = motlab::add(value(a), c);
    const bool rg = want_grad({a});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, o] { accumulate(a.id, grad_buf(o.id)); });
}

Var Graph::add_rowvec(Var a, Var v) {
    const Tensor& av = value(a);
    const Tensor& vv = value(v);
    check(av.cols() == vv.numel(), "add_rowvec: width mismatch");
    Tensor out = av;
    dtype_dispatch(av.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto od = out.data<T>();
        auto vd = vv.data<T>();
        const std::int64_t n = av.rows(), d = av.cols();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) od[static_cast<std::size_t>(i * d + j)] += vd[static_cast<std::size_t>(j)];
        return 0;
    });
    const bool rg = want_grad({a, v});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, v, o] {
        const Tensor& dc = grad_buf(o.id);
        accumulate(a.id, dc);
        if (node(v).requires_grad) {
            Tensor dv = Tensor::zeros(value(v).shape(), dc.dtype());
            const std::int64_t n = dc.rows(), d = dc.cols();
            dtype_dispatch(dc.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto dcd = dc.data<T>();
                auto dvd = dv.data<T>();
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < d; ++j) dvd[static_cast<std::size_t>(j)] += dcd[static_cast<std::size_t>(i * d + j)];
                return 0;
            });
            accumulate_move(v.id, std::move(dv));
        }
    });
}

Var Graph::mul_colvec(Var a, Var c) {
    const Tensor& av = value(a);
    const Tensor& cv = value(c);
    check(av.rows() == cv.numel(), "mul_colvec: length mismatch");
    Tensor out = av;
    const std::int64_t n = av.rows(), d = av.cols();
    for (std::int64_t i = 0; i < n; ++i) {
        const double s = cv.at(i);
        for (std::int64_t j = 0; j < d; ++j) out.set(i * d + j, out.at(i * d + j) * s);
    }
    const bool rg = want_grad({a, c});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, c, o, n, d] {
        const Tensor& dc = grad_buf(o.id);
        const Tensor& av2 = value(a);
        const Tensor& cv2 = value(c);
        if (node(a).requires_grad) {
            Tensor da = dc;
            for (std::int64_t i = 0; i < n; ++i) {
                const double s = cv2.at(i);
                for (std::int64_t j = 0; j < d; ++j) da.set(i * d + j, da.at(i * d + j) * s);
            }
            accumulate_move(a.id, std::move(da));
        }
        if (node(c).requires_grad) {
            Tensor dcv = Tensor::zeros(cv2.shape(), cv2.dtype());
            for (std::int64_t i = 0; i < n; ++i) {
                double s = 0;
                for (std::int64_t j = 0; j < d; ++j) s += dc.at(i * d + j) * av2.at(i * d + j);
                dcv.set(i, s);
            }
            accumulate_move(c.id, std::move(dcv));
        }
    });
}

Var Graph::scale(Var a, double s) {
    Tensor out = motlab::scale(value(a), s);
    const bool rg = want_grad({a});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, o, s] {
        accumulate_move(a.id, motlab::scale(grad_buf(o.id), s));
    });
}

Var Graph::silu(Var a) {
    const Tensor& av = value(a);
    Tensor out = av;
    dtype_dispatch(av.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto od = out.data<T>();
        for (auto& x : od) {
            const T sig = static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x));
            x = x * sig;
        }
        return 0;
    });
    const bool rg = want_grad({a});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, o] {
        const Tensor& dc = grad_buf(o.id);
        const Tensor& av2 = value(a);
        Tensor da = dc;
        dtype_dispatch(dc.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dad = da.data<T>();
            auto xd = av2.data<T>();
            for (std::size_t i = 0; i < dad.size(); ++i) {
                const T x = xd[i];
                const T sig = static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x));
                dad[i] *= sig * (static_cast<T>(1) + x * (static_cast<T>(1) - sig));
            }
            return 0;
        });
        accumulate_move(a.id, std::move(da));
    });
}

Var Graph::exp(Var a) {
    const Tensor& av = value(a);
    Tensor out = av;
    dtype_dispatch(av.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto od = out.data<T>();
        for (auto& x : od) x = std::exp(x);
        return 0;
    });
    const bool rg = want_grad({a});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, a, o] {
        accumulate_move(a.id, motlab::mul(grad_buf(o.id), value(o)));
    });
}

Var Graph::softmax_masked(Var logits, const Tensor* add_mask) {
    const Tensor& lv = value(logits);
    const std::int64_t n = lv.rows(), d = lv.cols();
    if (add_mask) {
        check(add_mask->shape() == lv.shape(), "softmax_masked: mask shape " +
                                                   shape_str(add_mask->shape()) + " vs logits " +
                                                   shape_str(lv.shape()));
    }
    Tensor out = Tensor::zeros(lv.shape(), lv.dtype());
    for (std::int64_t i = 0; i < n; ++i) {
        double rowmax = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < d; ++j) {
            const double z = lv.at(i * d + j) + (add_mask ? add_mask->at(i * d + j) : 0.0);
            rowmax = std::max(rowmax, z);
        }
        if (rowmax <= kMaskNegInf * 0.1) continue;  // fully masked row -> zeros
        double denom = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double z = lv.at(i * d + j) + (add_mask ? add_mask->at(i * d + j) : 0.0);
            const double e = std::exp(z - rowmax);
            out.set(i * d + j, e);
            denom += e;
        }
        for (std::int64_t j = 0; j < d; ++j) out.set(i * d + j, out.at(i * d + j) / denom);
    }
    const bool rg = want_grad({logits});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, logits, o, n, d] {
        const Tensor& dy = grad_buf(o.id);
        const Tensor& p = value(o);
        Tensor dx = Tensor::zeros(p.shape(), p.dtype());
        for (std::int64_t i = 0; i < n; ++i) {
            double dot = 0;
            for (std::int64_t j = 0; j < d; ++j) dot += dy.at(i * d + j) * p.at(i * d + j);
            for (std::int64_t j = 0; j < d; ++j)
                dx.set(i * d + j, p.at(i * d + j) * (dy.at(i * d + j) - dot));
        }
        accumulate_move(logits.id, std::move(dx));
    });
}

Var Graph::rmsnorm(Var x, Var gain) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gain);
    const std::int64_t n = xv.rows(), d = xv.cols();
    check(gv.numel() == d, "rmsnorm: gain length " + std::to_string(gv.numel()) + " vs width " +
                               std::to_string(d));
    Tensor out = Tensor::zeros(xv.shape(), xv.dtype());
    for (std::int64_t i = 0; i < n; ++i) {
        double ss = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double v = xv.at(i * d + j);
            ss += v * v;
        }
        const double r = std::sqrt(ss / static_cast<double>(d) + kNormEps);
        for (std::int64_t j = 0; j < d; ++j)
            out.set(i * d + j, gv.at(j) * xv.at(i * d + j) / r);
    }
    const bool rg = want_grad({x, gain});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, gain, o, n, d] {
        const Tensor& dy = grad_buf(o.id);
        const Tensor& xv2 = value(x);
        const Tensor& gv2 = value(gain);
        Tensor dx = Tensor::zeros(xv2.shape(), xv2.dtype());
        Tensor dg = Tensor::zeros(gv2.shape(), gv2.dtype());
        for (std::int64_t i = 0; i < n; ++i) {
            double ss = 0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double v = xv2.at(i * d + j);
                ss += v * v;
            }
            const double r = std::sqrt(ss / static_cast<double>(d) + kNormEps);
            double dot = 0;  // sum_j dy_j g_j x_j
            for (std::int64_t j = 0; j < d; ++j)
                dot += dy.at(i * d + j) * gv2.at(j) * xv2.at(i * d + j);
            for (std::int64_t j = 0; j < d; ++j) {
                const double xj = xv2.at(i * d + j);
                const double dyj = dy.at(i * d + j);
                dx.set(i * d + j, gv2.at(j) * dyj / r - xj * dot / (static_cast<double>(d) * r * r * r));
                dg.set(j, dg.at(j) + dyj * xj / r);
            }
        }
        accumulate_move(x.id, std::move(dx));
        accumulate_move(gain.id, std::move(dg));
    });
}

Var Graph::layernorm(Var x, Var gain) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gain);
    const std::int64_t n = xv.rows(), d = xv.cols();
    check(gv.numel() == d, "layernorm: gain length mismatch");
    Tensor out = Tensor::zeros(xv.shape(), xv.dtype());
    for (std::int64_t i = 0; i < n; ++i) {
        double mu = 0;
        for (std::int64_t j = 0; j < d; ++j) mu += xv.at(i * d + j);
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = xv.at(i * d + j) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double s = std::sqrt(var + kNormEps);
        for (std::int64_t j = 0; j < d; ++j)
            out.set(i * d + j, gv.at(j) * (xv.at(i * d + j) - mu) / s);
    }
    const bool rg = want_grad({x, gain});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, gain, o, n, d] {
        const Tensor& dy = grad_buf(o.id);
        const Tensor& xv2 = value(x);
        const Tensor& gv2 = value(gain);
        Tensor dx = Tensor::zeros(xv2.shape(), xv2.dtype());
        Tensor dg = Tensor::zeros(gv2.shape(), gv2.dtype());
        for (std::int64_t i = 0; i < n; ++i) {
            double mu = 0;
            for (std::int64_t j = 0; j < d; ++j) mu += xv2.at(i * d + j);
            mu /= static_cast<double>(d);
            double var = 0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double c = xv2.at(i * d + j) - mu;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double s = std::sqrt(var + kNormEps);
            double m1 = 0, m2 = 0;  // mean(dyhat), mean(dyhat * xhat)
            for (std::int64_t j = 0; j < d; ++j) {
                const double xh = (xv2.at(i * d + j) - mu) / s;
                const double dyh = dy.at(i * d + j) * gv2.at(j);
                m1 += dyh;
                m2 += dyh * xh;
                dg.set(j, dg.at(j) + dy.at(i * d + j) * xh);
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::int64_t j = 0; j < d; ++j) {
                const double xh = (xv2.at(i * d + j) - mu) / s;
                const double dyh = dy.at(i * d + j) * gv2.at(j);
                dx.set(i * d + j, (dyh - m1 - xh * m2) / s);
            }
        }
        accumulate_move(x.id, std::move(dx));
        accumulate_move(gain.id, std::move(dg));
    });
}

Var Graph::gather_rows(Var x, std::vector<std::int64_t> idx) {
    const Tensor& xv = value(x);
    const std::int64_t d = xv.cols(), nx = xv.rows();
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(idx.size()), d}, xv.dtype());
    dtype_dispatch(xv.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto od = out.data<T>();
        auto xd = xv.data<T>();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            check(idx[i] >= 0 && idx[i] < nx, "gather_rows: index out of range");
            std::copy_n(xd.data() + idx[i] * d, d, od.data() + static_cast<std::int64_t>(i) * d);
        }
        return 0;
    });
    const bool rg = want_grad({x});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, o, idx = std::move(idx), d] {
        const Tensor& dy = grad_buf(o.id);
        Tensor dx = Tensor::zeros(value(x).shape(), dy.dtype());
        dtype_dispatch(dy.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dyd = dy.data<T>();
            auto dxd = dx.data<T>();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::int64_t j = 0; j < d; ++j)
                    dxd[static_cast<std::size_t>(idx[i] * d + j)] += dyd[static_cast<std::size_t>(static_cast<std::int64_t>(i) * d + j)];
            return 0;
        });
        accumulate_move(x.id, std::move(dx));
    });
}

Var Graph::scatter_rows(Var x, std::vector<std::int64_t> idx, std::int64_t n_rows) {
    const Tensor& xv = value(x);
    const std::int64_t d = xv.cols();
    check(static_cast<std::int64_t>(idx.size()) == xv.rows(), "scatter_rows: index count mismatch");
    Tensor out = Tensor::zeros({n_rows, d}, xv.dtype());
    std::vector<bool> seen(static_cast<std::size_t>(n_rows), false);
    dtype_dispatch(xv.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto od = out.data<T>();
        auto xd = xv.data<T>();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            check(idx[i] >= 0 && idx[i] < n_rows, "scatter_rows: index out of range");
            check(!seen[static_cast<std::size_t>(idx[i])], "scatter_rows: duplicate index");
            seen[static_cast<std::size_t>(idx[i])] = true;
            std::copy_n(xd.data() + static_cast<std::int64_t>(i) * d, d, od.data() + idx[i] * d);
        }
        return 0;
    });
    const bool rg = want_grad({x});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, o, idx = std::move(idx), d] {
        const Tensor& dy = grad_buf(o.id);
        Tensor dx = Tensor::zeros(value(x).shape(), dy.dtype());
        dtype_dispatch(dy.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dyd = dy.data<T>();
            auto dxd = dx.data<T>();
            for (std::size_t i = 0; i < idx.size(); ++i)
                std::copy_n(dyd.data() + idx[i] * d, d, dxd.data() + static_cast<std::int64_t>(i) * d);
            return 0;
        });
        accumulate_move(x.id, std::move(dx));
    });
}

Var Graph::slice_cols(Var x, std::int64_t begin, std::int64_t end) {
    const Tensor& xv = value(x);
    const std::int64_t n = xv.rows(), d = xv.cols(), w = end - begin;
    check(begin >= 0 && end <= d && w > 0, "slice_cols: bad range");
    Tensor out = Tensor::zeros({n, w}, xv.dtype());
    dtype_dispatch(xv.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto od = out.data<T>();
        auto xd = xv.data<T>();
        for (std::int64_t i = 0; i < n; ++i)
            std::copy_n(xd.data() + i * d + begin, w, od.data() + i * w);
        return 0;
    });
    const bool rg = want_grad({x});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, o, begin, w, n, d] {
        const Tensor& dy = grad_buf(o.id);
        Tensor dx = Tensor::zeros(value(x).shape(), dy.dtype());
        dtype_dispatch(dy.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dyd = dy.data<T>();
            auto dxd = dx.data<T>();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    dxd[static_cast<std::size_t>(i * d + begin + j)] += dyd[static_cast<std::size_t>(i * w + j)];
            return 0;
        });
        accumulate_move(x.id, std::move(dx));
    });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    const std::int64_t n = value(parts[0]).rows();
    std::int64_t total = 0;
    for (Var p : parts) {
        check(value(p).rows() == n, "concat_cols: row mismatch");
        total += value(p).cols();
    }
    Tensor out = Tensor::zeros({n, total}, value(parts[0]).dtype());
    std::int64_t off = 0;
    for (Var p : parts) {
        const Tensor& pv = value(p);
        const std::int64_t w = pv.cols();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < w; ++j) out.set(i * total + off + j, pv.at(i * w + j));
        off += w;
    }
    bool rg = false;
    for (Var p : parts) rg = rg || (grads_enabled_ && node(p).requires_grad);
    Var o{static_cast<int>(nodes_.size())};
    std::vector<Var> ps = parts;
    return push(std::move(out), rg, [this, ps = std::move(ps), o, n, total] {
        const Tensor& dy = grad_buf(o.id);
        std::int64_t off2 = 0;
        for (Var p : ps) {
            const std::int64_t w = value(p).cols();
            if (node(p).requires_grad) {
                Tensor dp = Tensor::zeros({n, w}, dy.dtype());
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < w; ++j) dp.set(i * w + j, dy.at(i * total + off2 + j));
                accumulate_move(p.id, std::move(dp));
            }
            off2 += w;
        }
    });
}

Var Graph::transpose(Var x) {
    const Tensor& xv = value(x);
    const std::int64_t n = xv.rows(), d = xv.cols();
    Tensor out = Tensor::zeros({d, n}, xv.dtype());
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out.set(j * n + i, xv.at(i * d + j));
    const bool rg = want_grad({x});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, o, n, d] {
        const Tensor& dy = grad_buf(o.id);
        Tensor dx = Tensor::zeros({n, d}, dy.dtype());
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) dx.set(i * d + j, dy.at(j * n + i));
        accumulate_move(x.id, std::move(dx));
    });
}

Var Graph::sum_all(Var x) {
    Tensor out = Tensor::full({1}, value(x).sum_all(), value(x).dtype());
    const bool rg = want_grad({x});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, o] {
        const double g = grad_buf(o.id).at(0);
        accumulate_move(x.id, Tensor::full(value(x).shape(), g, value(x).dtype()));
    });
}

Var Graph::mean_all(Var x) {
    const double inv = 1.0 / static_cast<double>(value(x).numel());
    Tensor out = Tensor::full({1}, value(x).sum_all() * inv, value(x).dtype());
    const bool rg = want_grad({x});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, x, o, inv] {
        const double g = grad_buf(o.id).at(0) * inv;
        accumulate_move(x.id, Tensor::full(value(x).shape(), g, value(x).dtype()));
    });
}

Var Graph::cross_entropy_logits(Var logits, std::vector<std::int64_t> targets) {
    const Tensor& lv = value(logits);
    const std::int64_t n = lv.rows(), d = lv.cols();
    check(static_cast<std::int64_t>(targets.size()) == n, "cross_entropy: target count mismatch");
    Tensor out = Tensor::zeros({n}, lv.dtype());
    for (std::int64_t i = 0; i < n; ++i) {
        if (targets[static_cast<std::size_t>(i)] < 0) continue;
        check(targets[static_cast<std::size_t>(i)] < d, "cross_entropy: target id out of range");
        double rowmax = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < d; ++j) rowmax = std::max(rowmax, lv.at(i * d + j));
        double denom = 0;
        for (std::int64_t j = 0; j < d; ++j) denom += std::exp(lv.at(i * d + j) - rowmax);
        const double lse = rowmax + std::log(denom);
        out.set(i, lse - lv.at(i * d + targets[static_cast<std::size_t>(i)]));
    }
    const bool rg = want_grad({logits});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, logits, o, targets = std::move(targets), n, d] {
        const Tensor& dy = grad_buf(o.id);
        const Tensor& lv2 = value(logits);
        Tensor dx = Tensor::zeros(lv2.shape(), lv2.dtype());
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t t = targets[static_cast<std::size_t>(i)];
            if (t < 0) continue;
            const double g = dy.at(i);
            if (g == 0.0) continue;
            double rowmax = -std::numeric_limits<double>::infinity();
            for (std::int64_t j = 0; j < d; ++j) rowmax = std::max(rowmax, lv2.at(i * d + j));
            double denom = 0;
            for (std::int64_t j = 0; j < d; ++j) denom += std::exp(lv2.at(i * d + j) - rowmax);
            for (std::int64_t j = 0; j < d; ++j) {
                const double p = std::exp(lv2.at(i * d + j) - rowmax) / denom;
                dx.set(i * d + j, g * (p - (j == t ? 1.0 : 0.0)));
            }
        }
        accumulate_move(logits.id, std::move(dx));
    });
}

Var Graph::mse_vs(Var pred, Tensor target) {
    const Tensor& pv = value(pred);
    check(pv.shape() == target.shape(), "mse_vs: shape mismatch " + shape_str(pv.shape()) +
                                            " vs " + shape_str(target.shape()));
    const std::int64_t n = pv.numel();
    double s = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double dlt = pv.at(i) - target.at(i);
        s += dlt * dlt;
    }
    Tensor out = Tensor::full({1}, s / static_cast<double>(n), pv.dtype());
    const bool rg = want_grad({pred});
    Var o{static_cast<int>(nodes_.size())};
    return push(std::move(out), rg, [this, pred, o, target = std::move(target), n] {
        const double g = grad_buf(o.id).at(0) * 2.0 / static_cast<double>(n);
        const Tensor& pv2 = value(pred);
        Tensor dx = Tensor::zeros(pv2.shape(), pv2.dtype());
        for (std::int64_t i = 0; i < n; ++i) dx.set(i, g * (pv2.at(i) - target.at(i)));
        accumulate_move(pred.id, std::move(dx));
    });
}

// ---------------------------------------------------------------------------
// Fused multi-head attention over a stacked batch.
// ---------------------------------------------------------------------------

namespace {

template <class T>
struct AttnSaved {
    // softmax probabilities per (sequence, head): each n x n, row-major
    std::vector<std::vector<T>> probs;
};

template <class T>
void attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                       const BatchAdditiveMasks& masks, int n_heads, Tensor& out,
                       AttnSaved<T>* saved) {
    const std::int64_t n = masks.seq_len;
    const std::int64_t batch = static_cast<std::int64_t>(masks.masks.size());
    const std::int64_t d_model = q.cols();
    const std::int64_t dk = d_model / n_heads;
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    MatMap<T> qm(q.data<T>().data(), q.rows(), d_model);
    MatMap<T> km(k.data<T>().data(), k.rows(), d_model);
    MatMap<T> vm(v.data<T>().data(), v.rows(), d_model);
    MutMatMap<T> om(out.data<T>().data(), out.rows(), d_model);
    Mat scores(n, n);
    for (std::int64_t b = 0; b < batch; ++b) {
        const Tensor& mask = masks.masks[static_cast<std::size_t>(b)];
        for (int h = 0; h < n_heads; ++h) {
            auto qb = qm.block(b * n, h * dk, n, dk);
            auto kb = km.block(b * n, h * dk, n, dk);
            auto vb = vm.block(b * n, h * dk, n, dk);
            scores.noalias() = qb * kb.transpose() * inv_sqrt_dk;
            macs::add(n * n * dk, MacCategory::attn_mix);
            // masked softmax rows
            for (std::int64_t i = 0; i < n; ++i) {
                T rowmax = std::numeric_limits<T>::lowest();
                for (std::int64_t j = 0; j < n; ++j) {
                    scores(i, j) += static_cast<T>(mask.at(i * n + j));
                    rowmax = std::max(rowmax, scores(i, j));
                }
                if (static_cast<double>(rowmax) <= kMaskNegInf * 0.1) {
                    scores.row(i).setZero();
                    continue;
                }
                T denom = 0;
                for (std::int64_t j = 0; j < n; ++j) {
                    scores(i, j) = std::exp(scores(i, j) - rowmax);
                    denom += scores(i, j);
                }
                scores.row(i) /= denom;
            }
            om.block(b * n, h * dk, n, dk).noalias() = scores * vb;
            macs::add(n * n * dk, MacCategory::attn_mix);
            if (saved) {
                auto& dst = saved->probs.emplace_back();
                dst.assign(scores.data(), scores.data() + n * n);
            }
        }
    }
}

template <class T>
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& dout,
                        const BatchAdditiveMasks& masks, int n_heads, const AttnSaved<T>& saved,
                        Tensor& dq, Tensor& dk_out, Tensor& dv) {
    const std::int64_t n = masks.seq_len;
    const std::int64_t batch = static_cast<std::int64_t>(masks.masks.size());
    const std::int64_t d_model = q.cols();
    const std::int64_t dk = d_model / n_heads;
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    MatMap<T> qm(q.data<T>().data(), q.rows(), d_model);
    MatMap<T> km(k.data<T>().data(), k.rows(), d_model);
    MatMap<T> vm(v.data<T>().data(), v.rows(), d_model);
    MatMap<T> dom(dout.data<T>().data(), dout.rows(), d_model);
    MutMatMap<T> dqm(dq.data<T>().data(), dq.rows(), d_model);
    MutMatMap<T> dkm(dk_out.data<T>().data(), dk_out.rows(), d_model);
    MutMatMap<T> dvm(dv.data<T>().data(), dv.rows(), d_model);
    Mat dp(n, n), ds(n, n);
    std::size_t slot = 0;
    for (std::int64_t b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
            Eigen::Map<const Mat> p(saved.probs[slot++].data(), n, n);
            auto qb = qm.block(b * n, h * dk, n, dk);
            auto kb = km.block(b * n, h * dk, n, dk);
            auto vb = vm.block(b * n, h * dk, n, dk);
            auto dob = dom.block(b * n, h * dk, n, dk);
            dp.noalias() = dob * vb.transpose();
            dvm.block(b * n, h * dk, n, dk).noalias() += p.transpose() * dob;
            macs::add(2 * n * n * dk, MacCategory::attn_mix);
            for (std::int64_t i = 0; i < n; ++i) {
                T dot = 0;
                for (std::int64_t j = 0; j < n; ++j) dot += dp(i, j) * p(i, j);
                for (std::int64_t j = 0; j < n; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
            }
            dqm.block(b * n, h * dk, n, dk).noalias() += ds * kb * inv_sqrt_dk;
            dkm.block(b * n, h * dk, n, dk).noalias() += ds.transpose() * qb * inv_sqrt_dk;
            macs::add(2 * n * n * dk, MacCategory::attn_mix);
        }
    }
}

}  // namespace

Var Graph::attention(Var q, Var k, Var v, std::shared_ptr<const BatchAdditiveMasks> masks,
                     int n_heads) {
    const Tensor& qv = value(q);
    const std::int64_t d_model = qv.cols();
    check(n_heads > 0 && d_model % n_heads == 0,
          "attention: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
              std::to_string(n_heads));
    check(qv.rows() == masks->seq_len * static_cast<std::int64_t>(masks->masks.size()),
          "attention: rows != batch * seq_len");
    check(qv.shape() == value(k).shape() && qv.shape() == value(v).shape(),
          "attention: q/k/v shape mismatch");

    Tensor out = Tensor::zeros(qv.shape(), qv.dtype());
    const bool rg = want_grad({q, k, v});
    if (!rg) {
        dtype_dispatch(qv.dtype(), [&](auto tag) {
            using T = decltype(tag);
            attention_forward<T>(qv, value(k), value(v), *masks, n_heads, out, nullptr);
            return 0;
        });
        return push(std::move(out), false, nullptr);
    }

    Var o{static_cast<int>(nodes_.size())};
    std::function<void()> bw;
    dtype_dispatch(qv.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto saved = std::make_shared<AttnSaved<T>>();
        attention_forward<T>(qv, value(k), value(v), *masks, n_heads, out, saved.get());
        bw = [this, q, k, v, o, masks, n_heads, saved] {
            const Tensor& dy = grad_buf(o.id);
            Tensor dq = Tensor::zeros(value(q).shape(), dy.dtype());
            Tensor dkk = Tensor::zeros(value(k).shape(), dy.dtype());
            Tensor dv = Tensor::zeros(value(v).shape(), dy.dtype());
            attention_backward<T>(value(q), value(k), value(v), dy, *masks, n_heads, *saved, dq,
                                  dkk, dv);
            accumulate_move(q.id, std::move(dq));
            accumulate_move(k.id, std::move(dkk));
            accumulate_move(v.id, std::move(dv));
        };
        return 0;
    });
    return push(std::move(out), true, std::move(bw));
}

}  // namespace motlab::nn
