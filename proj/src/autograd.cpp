#include "seglm/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace seglm::ag {
namespace {

thread_local bool g_grad_enabled = true;

Var make(Mat value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        for (const auto& in : inputs) {
            if (in.defined() && in.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(backward_fn);
    }
    return Var(std::move(node));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

void Node::accumulate(const Mat& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var parameter(Mat value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

Var constant(Mat value) { return parameter(std::move(value), false); }

Var scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
    if (!loss.requires_grad()) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->accumulate(Mat::Ones(loss.rows(), loss.cols()));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make(a.value() + b.value(), {a, b}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make(a.value() - b.value(), {a, b}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(-n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
        if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
    });
}

Var scale(const Var& a, double s) {
    return make(a.value() * s, {a}, [s](Node& n) { parent(n, 0).accumulate(n.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
    Mat out = a.value().rowwise() + row.value().row(0);
    return make(std::move(out), {a, row}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad.colwise().sum());
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    Mat out;
    out.noalias() = a.value() * b.value();
    return make(std::move(out), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) {
            Mat g;
            g.noalias() = n.grad * pb.value.transpose();
            pa.accumulate(g);
        }
        if (pb.requires_grad) {
            Mat g;
            g.noalias() = pa.value.transpose() * n.grad;
            pb.accumulate(g);
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    Mat out;
    out.noalias() = a.value() * b.value().transpose();
    return make(std::move(out), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) {
            Mat g;
            g.noalias() = n.grad * pb.value;
            pa.accumulate(g);
        }
        if (pb.requires_grad) {
            Mat g;
            g.noalias() = n.grad.transpose() * pa.value;
            pb.accumulate(g);
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    if (x.cols() != weight.rows()) throw std::invalid_argument("linear: input width mismatch");
    Mat out;
    out.noalias() = x.value() * weight.value();
    if (bias.defined()) {
        if (bias.rows() != 1 || bias.cols() != weight.cols()) throw std::invalid_argument("linear: bias shape");
        out.rowwise() += bias.value().row(0);
        return make(std::move(out), {x, weight, bias}, [](Node& n) {
            Node& px = parent(n, 0);
            Node& pw = parent(n, 1);
            Node& pb = parent(n, 2);
            if (px.requires_grad) {
                Mat g;
                g.noalias() = n.grad * pw.value.transpose();
                px.accumulate(g);
            }
            if (pw.requires_grad) {
                Mat g;
                g.noalias() = px.value.transpose() * n.grad;
                pw.accumulate(g);
            }
            if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
        });
    }
    return make(std::move(out), {x, weight}, [](Node& n) {
        Node& px = parent(n, 0);
        Node& pw = parent(n, 1);
        if (px.requires_grad) {
            Mat g;
            g.noalias() = n.grad * pw.value.transpose();
            px.accumulate(g);
        }
        if (pw.requires_grad) {
            Mat g;
            g.noalias() = px.value.transpose() * n.grad;
            pw.accumulate(g);
        }
    });
}

Var relu(const Var& a) {
    Mat out = a.value().cwiseMax(0.0);
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = parent(n, 0);
        p.accumulate((p.value.array() > 0.0).select(n.grad, 0.0));
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
    const Mat& x = a.value();
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = parent(n, 0);
        Mat g(p.value.rows(), p.value.cols());
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            const double v = p.value.data()[i];
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            g.data()[i] = n.grad.data()[i] * d;
        }
        p.accumulate(g);
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Mat& in = x.value();
    const Eigen::Index rows = in.rows();
    const Eigen::Index cols = in.cols();
    if (gamma.cols() != cols || beta.cols() != cols) throw std::invalid_argument("layer_norm: affine width");
    auto xhat = std::make_shared<Mat>(rows, cols);
    auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = in.row(r).mean();
        const double var = (in.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)(r) = is;
        xhat->row(r) = (in.row(r).array() - mu) * is;
    }
    Mat out = (xhat->array().rowwise() * gamma.value().row(0).array()).matrix();
    out.rowwise() += beta.value().row(0);
    return make(std::move(out), {x, gamma, beta}, [xhat, inv_std](Node& n) {
        Node& px = parent(n, 0);
        Node& pg = parent(n, 1);
        Node& pb = parent(n, 2);
        if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(*xhat).colwise().sum());
        if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
        if (px.requires_grad) {
            Mat dxhat = (n.grad.array().rowwise() * pg.value.row(0).array()).matrix();
            Mat g(dxhat.rows(), dxhat.cols());
            for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                const double m1 = dxhat.row(r).mean();
                const double m2 = dxhat.row(r).cwiseProduct(xhat->row(r)).mean();
                g.row(r) = (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
            }
            px.accumulate(g);
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int n_heads, int batch, bool causal) {
    const Eigen::Index d = q.cols();
    if (k.cols() != d || v.cols() != d) throw std::invalid_argument("attention: width mismatch");
    if (d % n_heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    if (batch <= 0 || q.rows() % batch != 0 || k.rows() % batch != 0 || v.rows() != k.rows()) {
        throw std::invalid_argument("attention: rows not divisible by batch");
    }
    const Eigen::Index tq = q.rows() / batch;
    const Eigen::Index tk = k.rows() / batch;
    if (causal && tq != tk) throw std::invalid_argument("attention: causal requires square blocks");
    const Eigen::Index dh = d / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(batch * n_heads));
    Mat out(q.rows(), d);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
            auto qb = q.value().block(b * tq, h * dh, tq, dh);
            auto kb = k.value().block(b * tk, h * dh, tk, dh);
            auto vb = v.value().block(b * tk, h * dh, tk, dh);
            Mat s;
            s.noalias() = qb * kb.transpose();
            s *= sc;
            for (Eigen::Index i = 0; i < tq; ++i) {
                const Eigen::Index limit = causal ? i + 1 : tk;
                double mx = s.row(i).head(limit).maxCoeff();
                double total = 0.0;
                for (Eigen::Index j = 0; j < limit; ++j) {
                    const double e = std::exp(s(i, j) - mx);
                    s(i, j) = e;
                    total += e;
                }
                s.row(i).head(limit) /= total;
                for (Eigen::Index j = limit; j < tk; ++j) s(i, j) = 0.0;
            }
            out.block(b * tq, h * dh, tq, dh).noalias() = s * vb;
            (*probs)[static_cast<std::size_t>(b * n_heads + h)] = std::move(s);
        }
    }
    return make(std::move(out), {q, k, v}, [probs, n_heads, batch, tq, tk, dh, sc](Node& n) {
        Node& pq = parent(n, 0);
        Node& pk = parent(n, 1);
        Node& pv = parent(n, 2);
        Mat gq = Mat::Zero(pq.value.rows(), pq.value.cols());
        Mat gk = Mat::Zero(pk.value.rows(), pk.value.cols());
        Mat gv = Mat::Zero(pv.value.rows(), pv.value.cols());
        for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < n_heads; ++h) {
                const Mat& p = (*probs)[static_cast<std::size_t>(b * n_heads + h)];
                auto go = n.grad.block(b * tq, h * dh, tq, dh);
                auto qb = pq.value.block(b * tq, h * dh, tq, dh);
                auto kb = pk.value.block(b * tk, h * dh, tk, dh);
                auto vb = pv.value.block(b * tk, h * dh, tk, dh);
                gv.block(b * tk, h * dh, tk, dh).noalias() += p.transpose() * go;
                Mat dp;
                dp.noalias() = go * vb.transpose();
                Eigen::VectorXd rs = dp.cwiseProduct(p).rowwise().sum();
                Mat ds = p.cwiseProduct(dp.colwise() - rs);
                ds *= sc;
                gq.block(b * tq, h * dh, tq, dh).noalias() += ds * kb;
                gk.block(b * tk, h * dh, tk, dh).noalias() += ds.transpose() * qb;
            }
        }
        pq.accumulate(gq);
        pk.accumulate(gk);
        pv.accumulate(gv);
    });
}

Var gather_rows(const Var& table, std::span<const int> rows) {
    auto idx = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
    Mat out(static_cast<Eigen::Index>(idx->size()), table.cols());
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const int r = (*idx)[i];
        if (r < 0 || r >= table.rows()) throw std::out_of_range("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(r);
    }
    return make(std::move(out), {table}, [idx](Node& n) {
        Node& p = parent(n, 0);
        Mat g = Mat::Zero(p.value.rows(), p.value.cols());
        for (std::size_t i = 0; i < idx->size(); ++i) g.row((*idx)[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        p.accumulate(g);
    });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.rows()) throw std::out_of_range("slice_rows: out of range");
    Mat out = x.value().middleRows(start, count);
    return make(std::move(out), {x}, [start, count](Node& n) {
        Node& p = parent(n, 0);
        Mat g = Mat::Zero(p.value.rows(), p.value.cols());
        g.middleRows(start, count) = n.grad;
        p.accumulate(g);
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: width mismatch");
        rows += p.rows();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make(std::move(out), inputs, [](Node& n) {
        Eigen::Index at = 0;
        for (auto& p : n.parents) {
            const Eigen::Index r = p->value.rows();
            if (p->requires_grad) p->accumulate(n.grad.middleRows(at, r));
            at += r;
        }
    });
}

Var repeat_rows(const Var& x, int times) {
    const Eigen::Index r = x.rows();
    Mat out(r * times, x.cols());
    for (int t = 0; t < times; ++t) out.middleRows(t * r, r) = x.value();
    return make(std::move(out), {x}, [times, r](Node& n) {
        Mat g = n.grad.middleRows(0, r);
        for (int t = 1; t < times; ++t) g += n.grad.middleRows(t * r, r);
        parent(n, 0).accumulate(g);
    });
}

Var apply_map(const Var& x, std::shared_ptr<const SparseMap> map) {
    if (x.rows() != map->in_rows || x.cols() != map->in_cols) throw std::invalid_argument("apply_map: input shape");
    Mat out(map->out_rows, map->out_cols);
    const double* in = x.value().data();
    double* o = out.data();
    const Eigen::Index n_out = map->out_rows * map->out_cols;
    for (Eigen::Index i = 0; i < n_out; ++i) {
        double acc = 0.0;
        for (int e = map->offsets[i]; e < map->offsets[i + 1]; ++e) acc += map->weights[e] * in[map->sources[e]];
        o[i] = acc;
    }
    return make(std::move(out), {x}, [map](Node& n) {
        Node& p = parent(n, 0);
        Mat g = Mat::Zero(p.value.rows(), p.value.cols());
        double* gd = g.data();
        const double* go = n.grad.data();
        const Eigen::Index n_out = map->out_rows * map->out_cols;
        for (Eigen::Index i = 0; i < n_out; ++i) {
            for (int e = map->offsets[i]; e < map->offsets[i + 1]; ++e) gd[map->sources[e]] += map->weights[e] * go[i];
        }
        p.accumulate(g);
    });
}

Var grouped_row_dot(const Var& a, const Var& e) {
    const Eigen::Index b = a.rows();
    if (a.cols() != e.cols() || b == 0 || e.rows() % b != 0) throw std::invalid_argument("grouped_row_dot: shape");
    const Eigen::Index per = e.rows() / b;
    Mat out(e.rows(), 1);
    for (Eigen::Index g = 0; g < b; ++g) {
        out.middleRows(g * per, per).noalias() = e.value().middleRows(g * per, per) * a.value().row(g).transpose();
    }
    return make(std::move(out), {a, e}, [per](Node& n) {
        Node& pa = parent(n, 0);
        Node& pe = parent(n, 1);
        const Eigen::Index b = pa.value.rows();
        if (pa.requires_grad) {
            Mat g(pa.value.rows(), pa.value.cols());
            for (Eigen::Index i = 0; i < b; ++i) {
                g.row(i).noalias() = n.grad.middleRows(i * per, per).transpose() * pe.value.middleRows(i * per, per);
            }
            pa.accumulate(g);
        }
        if (pe.requires_grad) {
            Mat g(pe.value.rows(), pe.value.cols());
            for (Eigen::Index i = 0; i < b; ++i) {
                g.middleRows(i * per, per).noalias() = n.grad.middleRows(i * per, per) * pa.value.row(i);
            }
            pe.accumulate(g);
        }
    });
}

Var sum_all(const Var& a) {
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = parent(n, 0);
        p.accumulate(Mat::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
    });
}

Var mean_all(const Var& a) {
    const double count = static_cast<double>(a.value().size());
    return scale(sum_all(a), 1.0 / count);
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> targets) {
    const Eigen::Index n = logits.rows();
    if (static_cast<std::size_t>(n) != targets.size()) throw std::invalid_argument("softmax_cross_entropy: target count");
    if (n == 0) throw std::invalid_argument("softmax_cross_entropy: no rows");
    auto probs = std::make_shared<Mat>(n, logits.cols());
    auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int t = (*tgt)[static_cast<std::size_t>(i)];
        if (t < 0 || t >= logits.cols()) throw std::out_of_range("softmax_cross_entropy: target id");
        const auto row = logits.value().row(i);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(t);
        probs->row(i) = (row.array() - lse).exp();
    }
    Mat out(1, 1);
    out(0, 0) = total / static_cast<double>(n);
    return make(std::move(out), {logits}, [probs, tgt](Node& node) {
        const double s = node.grad(0, 0) / static_cast<double>(probs->rows());
        Mat g = *probs;
        for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, (*tgt)[static_cast<std::size_t>(i)]) -= 1.0;
        parent(node, 0).accumulate(g * s);
    });
}

Var bce_with_logits(const Var& logits, std::span<const unsigned char> targets) {
    const Eigen::Index n = logits.value().size();
    if (static_cast<std::size_t>(n) != targets.size() || n == 0) throw std::invalid_argument("bce_with_logits: shape");
    auto tgt = std::make_shared<std::vector<unsigned char>>(targets.begin(), targets.end());
    const double* x = logits.value().data();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = (*tgt)[static_cast<std::size_t>(i)];
        total += std::max(x[i], 0.0) - x[i] * t + std::log1p(std::exp(-std::abs(x[i])));
    }
    Mat out(1, 1);
    out(0, 0) = total / static_cast<double>(n);
    return make(std::move(out), {logits}, [tgt](Node& node) {
        Node& p = parent(node, 0);
        const Eigen::Index n = p.value.size();
        const double s = node.grad(0, 0) / static_cast<double>(n);
        Mat g(p.value.rows(), p.value.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-p.value.data()[i]));
            g.data()[i] = s * (sig - (*tgt)[static_cast<std::size_t>(i)]);
        }
        p.accumulate(g);
    });
}

Var soft_dice(const Var& logits, std::span<const unsigned char> targets, double eps) {
    const Eigen::Index n = logits.value().size();
    if (static_cast<std::size_t>(n) != targets.size() || n == 0) throw std::invalid_argument("soft_dice: shape");
    auto sig = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    auto tgt = std::make_shared<std::vector<unsigned char>>(targets.begin(), targets.end());
    double inter = 0.0, sum_s = 0.0, sum_m = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-logits.value().data()[i]));
        (*sig)[static_cast<std::size_t>(i)] = s;
        const double m = (*tgt)[static_cast<std::size_t>(i)];
        inter += s * m;
        sum_s += s;
        sum_m += m;
    }
    const double num = 2.0 * inter + eps;
    const double den = sum_s + sum_m + eps;
    Mat out(1, 1);
    out(0, 0) = 1.0 - num / den;
    return make(std::move(out), {logits}, [sig, tgt, num, den](Node& node) {
        Node& p = parent(node, 0);
        Mat g(p.value.rows(), p.value.cols());
        const double up = node.grad(0, 0);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            const double s = (*sig)[static_cast<std::size_t>(i)];
            const double m = (*tgt)[static_cast<std::size_t>(i)];
            const double dds = -(2.0 * m * den - num) / (den * den);
            g.data()[i] = up * dds * s * (1.0 - s);
        }
        p.accumulate(g);
    });
}

}  // namespace seglm::ag
