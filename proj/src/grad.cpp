#include "steerlab/grad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "steerlab/error.hpp"

namespace steerlab::grad {

namespace {

thread_local bool g_no_grad = false;

void check_finite_span(std::span<const double> data, const char* what) {
    for (double v : data) {
        if (!std::isfinite(v)) {
            fail(ErrorCode::non_finite, std::string(what) + ": non-finite value");
        }
    }
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    int64_t n = shape_size(shape);
    if (n <= 0) fail(ErrorCode::shape_mismatch, "tensor shape must have positive extents");
    if (static_cast<int64_t>(data.size()) != n) {
        fail(ErrorCode::shape_mismatch, "data length " + std::to_string(data.size()) +
                                            " does not match shape " + shape_str(shape));
    }
    check_finite_span(data, "tensor construction");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

// Records an op result. Graph edges are kept only when some input requires
// grad and grad mode is on; otherwise the result is a plain constant.
Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::vector<Tensor> inputs, BackwardFn fn) {
    check_finite_span(data, op);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = false;
    if (!g_no_grad) {
        for (const Tensor& t : inputs) {
            if (t.requires_grad()) { needs = true; break; }
        }
    }
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (Tensor& t : inputs) node->inputs.push_back(t.node_ptr());
        node->backward_fn = std::move(fn);
    }
    return Tensor::wrap(std::move(node));
}

void accumulate(GradTable& grads, const Node* input, std::span<const double> contribution) {
    if (!input->requires_grad) return;
    std::vector<double>& slot = grads.slot(input);
    for (std::size_t i = 0; i < contribution.size(); ++i) slot[i] += contribution[i];
}

// For backward fns that fill a buffer per input.
std::vector<double> zeros_like(const Node& node) {
    return std::vector<double>(node.data.size(), 0.0);
}

void require(bool cond, ErrorCode code, const std::string& message) {
    if (!cond) fail(code, message);
}

std::pair<int, int> rows_cols(const Shape& shape) {
    if (shape.size() == 1) return {1, shape[0]};
    if (shape.size() == 2) return {shape[0], shape[1]};
    fail(ErrorCode::shape_mismatch, "expected rank 1 or 2, got " + shape_str(shape));
}

}  // namespace

int64_t shape_size(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_size(shape);
    require(n > 0, ErrorCode::shape_mismatch, "zeros: empty shape");
    return Tensor::wrap(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    int64_t n = shape_size(shape);
    require(n > 0, ErrorCode::shape_mismatch, "full: empty shape");
    return Tensor::wrap(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor::wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->data.size()); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->on_graph() && node_->inputs.empty(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
    require(is_leaf(), ErrorCode::invalid_argument, "mutable_data: only leaves are mutable");
    return node_->data;
}

double Tensor::item() const {
    require(size() == 1, ErrorCode::shape_mismatch, "item: tensor is not scalar");
    return node_->data[0];
}

double Tensor::at(int64_t i) const { return node_->data.at(static_cast<std::size_t>(i)); }

bool GradTable::contains(const Tensor& t) const { return grads_.count(t.node()) > 0; }

const std::vector<double>* GradTable::find(const Tensor& t) const { return find_node(t.node()); }

const std::vector<double>* GradTable::find_node(const Node* node) const {
    auto it = grads_.find(node);
    return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradTable::grad(const Tensor& t) const {
    const std::vector<double>* g = find(t);
    require(g != nullptr, ErrorCode::invalid_argument, "grad: no entry for tensor");
    return Tensor::from_data(t.shape(), *g);
}

std::vector<double>& GradTable::slot(const Node* node) {
    auto it = grads_.find(node);
    if (it == grads_.end()) {
        it = grads_.emplace(node, std::vector<double>(node->data.size(), 0.0)).first;
    }
    return it->second;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }

bool grad_enabled() { return !g_no_grad; }

GradTable backward(const Tensor& scalar_output) {
    require(scalar_output.valid(), ErrorCode::invalid_argument, "backward: null tensor");
    Node* root = scalar_output.node();
    require(root->data.size() == 1 && root->shape == Shape{1}, ErrorCode::shape_mismatch,
            "backward: output must have shape [1]");
    require(root->on_graph(), ErrorCode::invalid_argument,
            "backward: output does not lie on a recorded graph");
    require(!root->consumed, ErrorCode::invalid_argument,
            "backward: graph already consumed by a previous backward");

    // Postorder DFS over grad-requiring nodes, iterative to keep deep chains safe.
    std::vector<Node*> topo;
    std::unordered_map<Node*, int> state;  // 0 unseen, 1 open, 2 done
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    state[root] = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && state[child] == 0) {
                state[child] = 1;
                stack.emplace_back(child, 0);
            }
        } else {
            state[node] = 2;
            topo.push_back(node);
            stack.pop_back();
        }
    }

    GradTable grads;
    grads.slot(root)[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* node = *it;
        node->consumed = true;
        if (!node->backward_fn) continue;
        const std::vector<double>* gout = grads.find_node(node);
        if (gout == nullptr) continue;  // zero contribution upstream
        node->backward_fn(*node, *gout, grads);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2, ErrorCode::shape_mismatch,
            "matmul: rank-2 operands required");
    int m = a.shape()[0], k = a.shape()[1];
    int k2 = b.shape()[0], n = b.shape()[1];
    require(k == k2, ErrorCode::shape_mismatch,
            "matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            double aip = A[i * k + p];
            const double* Brow = B + p * n;
            double* Orow = out.data() + i * n;
            for (int j = 0; j < n; ++j) Orow[j] += aip * Brow[j];
        }
    }
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [m, k, n](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* na = self.inputs[0].get();
                       const Node* nb = self.inputs[1].get();
                       if (na->requires_grad) {
                           std::vector<double> da(na->data.size(), 0.0);
                           const double* B = nb->data.data();
                           for (int i = 0; i < m; ++i)
                               for (int j = 0; j < n; ++j) {
                                   double gij = g[i * n + j];
                                   for (int p = 0; p < k; ++p) da[i * k + p] += gij * B[p * n + j];
                               }
                           accumulate(grads, na, da);
                       }
                       if (nb->requires_grad) {
                           std::vector<double> db(nb->data.size(), 0.0);
                           const double* A = na->data.data();
                           for (int i = 0; i < m; ++i)
                               for (int p = 0; p < k; ++p) {
                                   double aip = A[i * k + p];
                                   for (int j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
                               }
                           accumulate(grads, nb, db);
                       }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
    bool same = a.shape() == b.shape();
    bool row_broadcast = a.shape().size() == 2 && b.shape().size() == 1 &&
                         a.shape()[1] == b.shape()[0];
    require(same || row_broadcast, ErrorCode::shape_mismatch,
            "add: shapes " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
    std::vector<double> out(a.data().begin(), a.data().end());
    if (same) {
        for (int64_t i = 0; i < b.size(); ++i) out[i] += b.at(i);
    } else {
        int rows = a.shape()[0], cols = a.shape()[1];
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) out[i * cols + j] += b.at(j);
    }
    return make_op("add", a.shape(), std::move(out), {a, b},
                   [same](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* na = self.inputs[0].get();
                       const Node* nb = self.inputs[1].get();
                       accumulate(grads, na, g);
                       if (!nb->requires_grad) return;
                       if (same) {
                           accumulate(grads, nb, g);
                       } else {
                           auto [rows, cols] = rows_cols(na->shape);
                           std::vector<double> db(static_cast<std::size_t>(cols), 0.0);
                           for (int i = 0; i < rows; ++i)
                               for (int j = 0; j < cols; ++j) db[j] += g[i * cols + j];
                           accumulate(grads, nb, db);
                       }
                   });
}

Tensor scale(const Tensor& a, double c) {
    require(std::isfinite(c), ErrorCode::non_finite, "scale: non-finite factor");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= c;
    return make_op("scale", a.shape(), std::move(out), {a},
                   [c](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* na = self.inputs[0].get();
                       if (!na->requires_grad) return;
                       std::vector<double> da(g.size());
                       for (std::size_t i = 0; i < g.size(); ++i) da[i] = c * g[i];
                       accumulate(grads, na, da);
                   });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    require(table.shape().size() == 2, ErrorCode::shape_mismatch,
            "embedding_lookup: table must be rank 2");
    require(!ids.empty(), ErrorCode::invalid_argument, "embedding_lookup: empty id list");
    int vocab = table.shape()[0], dim = table.shape()[1];
    for (int id : ids) {
        require(id >= 0 && id < vocab, ErrorCode::invalid_argument,
                "embedding_lookup: id " + std::to_string(id) + " out of range");
    }
    int n = static_cast<int>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(n) * dim);
    for (int i = 0; i < n; ++i) {
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * dim, dim,
                    out.data() + static_cast<std::size_t>(i) * dim);
    }
    std::vector<int> ids_copy(ids.begin(), ids.end());
    return make_op("embedding-lookup", {n, dim}, std::move(out), {table},
                   [ids_copy, dim](const Node& self, const std::vector<double>& g,
                                   GradTable& grads) {
                       const Node* nt = self.inputs[0].get();
                       if (!nt->requires_grad) return;
                       std::vector<double> dt = zeros_like(*nt);
                       for (std::size_t i = 0; i < ids_copy.size(); ++i)
                           for (int j = 0; j < dim; ++j)
                               dt[static_cast<std::size_t>(ids_copy[i]) * dim + j] +=
                                   g[i * dim + j];
                       accumulate(grads, nt, dt);
                   });
}

namespace {

Tensor layer_norm_impl(const Tensor& x, const Tensor* gain, const Tensor* bias) {
    auto [rows, cols] = rows_cols(x.shape());
    if (gain) {
        require(gain->shape() == Shape{cols} && bias->shape() == Shape{cols},
                ErrorCode::shape_mismatch, "layer_norm: affine params must be [d]");
    }
    std::vector<double> out(x.size());
    std::vector<double> normalized(x.size());
    std::vector<double> inv_std(rows);
    const double* X = x.data().data();
    for (int i = 0; i < rows; ++i) {
        const double* row = X + static_cast<std::size_t>(i) * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += row[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= cols;
        double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[i] = is;
        for (int j = 0; j < cols; ++j) {
            double y = (row[j] - mean) * is;
            normalized[static_cast<std::size_t>(i) * cols + j] = y;
            double o = y;
            if (gain) o = o * gain->at(j) + bias->at(j);
            out[static_cast<std::size_t>(i) * cols + j] = o;
        }
    }
    std::vector<Tensor> inputs = {x};
    if (gain) {
        inputs.push_back(*gain);
        inputs.push_back(*bias);
    }
    bool affine = gain != nullptr;
    int r = rows, c = cols;
    return make_op(
        "layer-norm", x.shape(), std::move(out), std::move(inputs),
        [normalized, inv_std, affine, r, c](const Node& self, const std::vector<double>& g,
                                            GradTable& grads) {
            const Node* nx = self.inputs[0].get();
            const Node* ngain = affine ? self.inputs[1].get() : nullptr;
            const Node* nbias = affine ? self.inputs[2].get() : nullptr;
            if (affine) {
                if (ngain->requires_grad) {
                    std::vector<double> dg(static_cast<std::size_t>(c), 0.0);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j)
                            dg[j] += g[static_cast<std::size_t>(i) * c + j] *
                                     normalized[static_cast<std::size_t>(i) * c + j];
                    accumulate(grads, ngain, dg);
                }
                if (nbias->requires_grad) {
                    std::vector<double> db(static_cast<std::size_t>(c), 0.0);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) db[j] += g[static_cast<std::size_t>(i) * c + j];
                    accumulate(grads, nbias, db);
                }
            }
            if (!nx->requires_grad) return;
            std::vector<double> dx(nx->data.size());
            for (int i = 0; i < r; ++i) {
                const double* grow = g.data() + static_cast<std::size_t>(i) * c;
                const double* yrow = normalized.data() + static_cast<std::size_t>(i) * c;
                double mean_g = 0.0, mean_gy = 0.0;
                std::vector<double> gh(static_cast<std::size_t>(c));
                for (int j = 0; j < c; ++j) {
                    double v = grow[j];
                    if (affine) v *= ngain->data[j];
                    gh[j] = v;
                    mean_g += v;
                    mean_gy += v * yrow[j];
                }
                mean_g /= c;
                mean_gy /= c;
                for (int j = 0; j < c; ++j)
                    dx[static_cast<std::size_t>(i) * c + j] =
                        inv_std[i] * (gh[j] - mean_g - yrow[j] * mean_gy);
            }
            accumulate(grads, nx, dx);
        });
}

}  // namespace

Tensor layer_norm(const Tensor& x) { return layer_norm_impl(x, nullptr, nullptr); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    return layer_norm_impl(x, &gain, &bias);
}

Tensor softmax(const Tensor& x) {
    auto [rows, cols] = rows_cols(x.shape());
    std::vector<double> out(x.size());
    const double* X = x.data().data();
    for (int i = 0; i < rows; ++i) {
        const double* row = X + static_cast<std::size_t>(i) * cols;
        double* orow = out.data() + static_cast<std::size_t>(i) * cols;
        double mx = row[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < cols; ++j) orow[j] /= sum;
    }
    int r = rows, c = cols;
    return make_op("softmax", x.shape(), std::move(out), {x},
                   [r, c](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* nx = self.inputs[0].get();
                       if (!nx->requires_grad) return;
                       std::vector<double> dx(nx->data.size());
                       for (int i = 0; i < r; ++i) {
                           const double* p = self.data.data() + static_cast<std::size_t>(i) * c;
                           const double* grow = g.data() + static_cast<std::size_t>(i) * c;
                           double dot = 0.0;
                           for (int j = 0; j < c; ++j) dot += grow[j] * p[j];
                           for (int j = 0; j < c; ++j)
                               dx[static_cast<std::size_t>(i) * c + j] = p[j] * (grow[j] - dot);
                       }
                       accumulate(grads, nx, dx);
                   });
}

Tensor log_softmax(const Tensor& x) {
    auto [rows, cols] = rows_cols(x.shape());
    std::vector<double> out(x.size());
    const double* X = x.data().data();
    for (int i = 0; i < rows; ++i) {
        const double* row = X + static_cast<std::size_t>(i) * cols;
        double* orow = out.data() + static_cast<std::size_t>(i) * cols;
        double mx = row[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
        double lse = mx + std::log(sum);
        for (int j = 0; j < cols; ++j) orow[j] = row[j] - lse;
    }
    int r = rows, c = cols;
    return make_op("log-softmax", x.shape(), std::move(out), {x},
                   [r, c](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* nx = self.inputs[0].get();
                       if (!nx->requires_grad) return;
                       std::vector<double> dx(nx->data.size());
                       for (int i = 0; i < r; ++i) {
                           const double* lsm = self.data.data() + static_cast<std::size_t>(i) * c;
                           const double* grow = g.data() + static_cast<std::size_t>(i) * c;
                           double gsum = 0.0;
                           for (int j = 0; j < c; ++j) gsum += grow[j];
                           for (int j = 0; j < c; ++j)
                               dx[static_cast<std::size_t>(i) * c + j] =
                                   grow[j] - std::exp(lsm[j]) * gsum;
                       }
                       accumulate(grads, nx, dx);
                   });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<double> out(x.size());
    for (int64_t i = 0; i < x.size(); ++i) {
        double v = x.at(i);
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    return make_op("gelu", x.shape(), std::move(out), {x},
                   [](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* nx = self.inputs[0].get();
                       if (!nx->requires_grad) return;
                       std::vector<double> dx(nx->data.size());
                       for (std::size_t i = 0; i < dx.size(); ++i) {
                           double v = nx->data[i];
                           double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                           double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                           dx[i] = g[i] * (cdf + v * pdf);
                       }
                       accumulate(grads, nx, dx);
                   });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    require(q.shape().size() == 2 && k.shape() == q.shape() && v.shape() == q.shape(),
            ErrorCode::shape_mismatch, "causal_attention: q,k,v must share shape [n,dh]");
    int n = q.shape()[0], dh = q.shape()[1];
    double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
    // Row-causal softmax weights, lower-triangular storage padded to n*n.
    std::vector<double> attn(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> out(static_cast<std::size_t>(n) * dh, 0.0);
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    for (int i = 0; i < n; ++i) {
        double* arow = attn.data() + static_cast<std::size_t>(i) * n;
        double mx = -1e300;
        for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int p = 0; p < dh; ++p) s += Q[i * dh + p] * K[j * dh + p];
            arow[j] = s * scale_f;
            mx = std::max(mx, arow[j]);
        }
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
            arow[j] = std::exp(arow[j] - mx);
            sum += arow[j];
        }
        for (int j = 0; j <= i; ++j) arow[j] /= sum;
        double* orow = out.data() + static_cast<std::size_t>(i) * dh;
        for (int j = 0; j <= i; ++j) {
            double a = arow[j];
            for (int p = 0; p < dh; ++p) orow[p] += a * V[j * dh + p];
        }
    }
    return make_op(
        "causal-attention", q.shape(), std::move(out), {q, k, v},
        [n, dh, scale_f, attn](const Node& self, const std::vector<double>& g, GradTable& grads) {
            const Node* nq = self.inputs[0].get();
            const Node* nk = self.inputs[1].get();
            const Node* nv = self.inputs[2].get();
            bool need_q = nq->requires_grad, need_k = nk->requires_grad,
                 need_v = nv->requires_grad;
            if (!(need_q || need_k || need_v)) return;
            std::vector<double> dq(nq->data.size(), 0.0), dk(nk->data.size(), 0.0),
                dv(nv->data.size(), 0.0);
            const double* Q = nq->data.data();
            const double* K = nk->data.data();
            const double* V = nv->data.data();
            for (int i = 0; i < n; ++i) {
                const double* arow = attn.data() + static_cast<std::size_t>(i) * n;
                const double* grow = g.data() + static_cast<std::size_t>(i) * dh;
                // da_ij = g_i . v_j ; ds_ij = a_ij (da_ij - sum_k a_ik da_ik)
                double dot = 0.0;
                std::vector<double> da(static_cast<std::size_t>(i) + 1);
                for (int j = 0; j <= i; ++j) {
                    double d = 0.0;
                    for (int p = 0; p < dh; ++p) d += grow[p] * V[j * dh + p];
                    da[j] = d;
                    dot += arow[j] * d;
                }
                for (int j = 0; j <= i; ++j) {
                    double a = arow[j];
                    if (need_v)
                        for (int p = 0; p < dh; ++p) dv[j * dh + p] += a * grow[p];
                    double ds = a * (da[j] - dot) * scale_f;
                    if (need_q)
                        for (int p = 0; p < dh; ++p) dq[i * dh + p] += ds * K[j * dh + p];
                    if (need_k)
                        for (int p = 0; p < dh; ++p) dk[j * dh + p] += ds * Q[i * dh + p];
                }
            }
            if (need_q) accumulate(grads, nq, dq);
            if (need_k) accumulate(grads, nk, dk);
            if (need_v) accumulate(grads, nv, dv);
        });
}

Tensor mean_pool(const Tensor& x) {
    if (x.shape().size() == 1) {
        int n = x.shape()[0];
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += x.at(i);
        return make_op("mean-pool", {1}, {sum / n}, {x},
                       [n](const Node& self, const std::vector<double>& g, GradTable& grads) {
                           const Node* nx = self.inputs[0].get();
                           if (!nx->requires_grad) return;
                           std::vector<double> dx(nx->data.size(), g[0] / n);
                           accumulate(grads, nx, dx);
                       });
    }
    require(x.shape().size() == 2, ErrorCode::shape_mismatch, "mean_pool: rank 1 or 2 required");
    int n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[j] += x.at(static_cast<int64_t>(i) * d + j);
    for (int j = 0; j < d; ++j) out[j] /= n;
    return make_op("mean-pool", {d}, std::move(out), {x},
                   [n, d](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* nx = self.inputs[0].get();
                       if (!nx->requires_grad) return;
                       std::vector<double> dx(nx->data.size());
                       for (int i = 0; i < n; ++i)
                           for (int j = 0; j < d; ++j)
                               dx[static_cast<std::size_t>(i) * d + j] = g[j] / n;
                       accumulate(grads, nx, dx);
                   });
}

Tensor cosine(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 1 && a.shape() == b.shape(), ErrorCode::shape_mismatch,
            "cosine: two equal-length vectors required");
    int d = a.shape()[0];
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < d; ++i) {
        dot += a.at(i) * b.at(i);
        na2 += a.at(i) * a.at(i);
        nb2 += b.at(i) * b.at(i);
    }
    double na = std::sqrt(na2), nb = std::sqrt(nb2);
    bool degenerate = (na == 0.0 || nb == 0.0);
    double value = degenerate ? 0.0 : dot / (na * nb);
    return make_op(
        "cosine", {1}, {value}, {a, b},
        [d, na, nb, value, degenerate](const Node& self, const std::vector<double>& g,
                                       GradTable& grads) {
            const Node* pa = self.inputs[0].get();
            const Node* pb = self.inputs[1].get();
            if (degenerate) return;  // defined as 0, flat
            double go = g[0];
            if (pa->requires_grad) {
                std::vector<double> da(static_cast<std::size_t>(d));
                for (int i = 0; i < d; ++i)
                    da[i] = go * (pb->data[i] / (na * nb) - value * pa->data[i] / (na * na));
                accumulate(grads, pa, da);
            }
            if (pb->requires_grad) {
                std::vector<double> db(static_cast<std::size_t>(d));
                for (int i = 0; i < d; ++i)
                    db[i] = go * (pa->data[i] / (na * nb) - value * pb->data[i] / (nb * nb));
                accumulate(grads, pb, db);
            }
        });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), ErrorCode::shape_mismatch, "mse: shape mismatch");
    int64_t n = a.size();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = a.at(i) - b.at(i);
        sum += d * d;
    }
    return make_op("mse", {1}, {sum / static_cast<double>(n)}, {a, b},
                   [n](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* pa = self.inputs[0].get();
                       const Node* pb = self.inputs[1].get();
                       double c = 2.0 * g[0] / static_cast<double>(n);
                       if (pa->requires_grad) {
                           std::vector<double> da(pa->data.size());
                           for (int64_t i = 0; i < n; ++i)
                               da[i] = c * (pa->data[i] - pb->data[i]);
                           accumulate(grads, pa, da);
                       }
                       if (pb->requires_grad) {
                           std::vector<double> db(pb->data.size());
                           for (int64_t i = 0; i < n; ++i)
                               db[i] = -c * (pa->data[i] - pb->data[i]);
                           accumulate(grads, pb, db);
                       }
                   });
}

Tensor log(const Tensor& x) {
    std::vector<double> out(x.size());
    for (int64_t i = 0; i < x.size(); ++i) {
        require(x.at(i) > 0.0, ErrorCode::non_finite, "log: non-positive input");
        out[i] = std::log(x.at(i));
    }
    return make_op("log", x.shape(), std::move(out), {x},
                   [](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* nx = self.inputs[0].get();
                       if (!nx->requires_grad) return;
                       std::vector<double> dx(nx->data.size());
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] / nx->data[i];
                       accumulate(grads, nx, dx);
                   });
}

Tensor exp(const Tensor& x) {
    std::vector<double> out(x.size());
    for (int64_t i = 0; i < x.size(); ++i) out[i] = std::exp(x.at(i));
    return make_op("exp", x.shape(), std::move(out), {x},
                   [](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* nx = self.inputs[0].get();
                       if (!nx->requires_grad) return;
                       std::vector<double> dx(nx->data.size());
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * self.data[i];
                       accumulate(grads, nx, dx);
                   });
}

Tensor concat(const Tensor& a, const Tensor& b, int dim) {
    require(dim == 0 || dim == 1, ErrorCode::invalid_argument, "concat: dim must be 0 or 1");
    if (a.shape().size() == 1) {
        require(dim == 0 && b.shape().size() == 1, ErrorCode::shape_mismatch,
                "concat: rank-1 tensors concat along dim 0 only");
        int na = a.shape()[0], nb = b.shape()[0];
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(na) + nb);
        out.insert(out.end(), a.data().begin(), a.data().end());
        out.insert(out.end(), b.data().begin(), b.data().end());
        return make_op("concat", {na + nb}, std::move(out), {a, b},
                       [na, nb](const Node& self, const std::vector<double>& g, GradTable& grads) {
                           const Node* pa = self.inputs[0].get();
                           const Node* pb = self.inputs[1].get();
                           if (pa->requires_grad)
                               accumulate(grads, pa, std::span<const double>(g.data(), na));
                           if (pb->requires_grad)
                               accumulate(grads, pb, std::span<const double>(g.data() + na, nb));
                       });
    }
    require(a.shape().size() == 2 && b.shape().size() == 2, ErrorCode::shape_mismatch,
            "concat: rank mismatch");
    if (dim == 0) {
        require(a.shape()[1] == b.shape()[1], ErrorCode::shape_mismatch,
                "concat dim 0: column counts differ");
        int ra = a.shape()[0], rb = b.shape()[0], c = a.shape()[1];
        std::vector<double> out;
        out.reserve(a.data().size() + b.data().size());
        out.insert(out.end(), a.data().begin(), a.data().end());
        out.insert(out.end(), b.data().begin(), b.data().end());
        return make_op("concat", {ra + rb, c}, std::move(out), {a, b},
                       [ra, rb, c](const Node& self, const std::vector<double>& g,
                                   GradTable& grads) {
                           const Node* pa = self.inputs[0].get();
                           const Node* pb = self.inputs[1].get();
                           if (pa->requires_grad)
                               accumulate(grads, pa,
                                          std::span<const double>(g.data(),
                                                                  static_cast<std::size_t>(ra) * c));
                           if (pb->requires_grad)
                               accumulate(grads, pb,
                                          std::span<const double>(
                                              g.data() + static_cast<std::size_t>(ra) * c,
                                              static_cast<std::size_t>(rb) * c));
                       });
    }
    require(a.shape()[0] == b.shape()[0], ErrorCode::shape_mismatch,
            "concat dim 1: row counts differ");
    int r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(r) * (ca + cb));
    for (int i = 0; i < r; ++i) {
        std::copy_n(a.data().data() + static_cast<std::size_t>(i) * ca, ca,
                    out.data() + static_cast<std::size_t>(i) * (ca + cb));
        std::copy_n(b.data().data() + static_cast<std::size_t>(i) * cb, cb,
                    out.data() + static_cast<std::size_t>(i) * (ca + cb) + ca);
    }
    return make_op("concat", {r, ca + cb}, std::move(out), {a, b},
                   [r, ca, cb](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       const Node* pa = self.inputs[0].get();
                       const Node* pb = self.inputs[1].get();
                       int cw = ca + cb;
                       if (pa->requires_grad) {
                           std::vector<double> da(static_cast<std::size_t>(r) * ca);
                           for (int i = 0; i < r; ++i)
                               std::copy_n(g.data() + static_cast<std::size_t>(i) * cw, ca,
                                           da.data() + static_cast<std::size_t>(i) * ca);
                           accumulate(grads, pa, da);
                       }
                       if (pb->requires_grad) {
                           std::vector<double> db(static_cast<std::size_t>(r) * cb);
                           for (int i = 0; i < r; ++i)
                               std::copy_n(g.data() + static_cast<std::size_t>(i) * cw + ca, cb,
                                           db.data() + static_cast<std::size_t>(i) * cb);
                           accumulate(grads, pb, db);
                       }
                   });
}

Tensor slice(const Tensor& x, int dim, int start, int len) {
    require(dim == 0 || dim == 1, ErrorCode::invalid_argument, "slice: dim must be 0 or 1");
    require(len >= 1, ErrorCode::invalid_argument, "slice: length must be positive");
    if (x.shape().size() == 1) {
        require(dim == 0, ErrorCode::shape_mismatch, "slice: rank-1 tensors slice along dim 0");
        int n = x.shape()[0];
        require(start >= 0 && start + len <= n, ErrorCode::invalid_argument,
                "slice: range out of bounds");
        std::vector<double> out(x.data().begin() + start, x.data().begin() + start + len);
        return make_op("slice", {len}, std::move(out), {x},
                       [start, len](const Node& self, const std::vector<double>& g,
                                    GradTable& grads) {
                           const Node* nx = self.inputs[0].get();
                           if (!nx->requires_grad) return;
                           std::vector<double> dx(nx->data.size(), 0.0);
                           for (int i = 0; i < len; ++i) dx[start + i] = g[i];
                           accumulate(grads, nx, dx);
                       });
    }
    require(x.shape().size() == 2, ErrorCode::shape_mismatch, "slice: rank 1 or 2 required");
    int rows = x.shape()[0], cols = x.shape()[1];
    if (dim == 0) {
        require(start >= 0 && start + len <= rows, ErrorCode::invalid_argument,
                "slice: row range out of bounds");
        std::vector<double> out(x.data().begin() + static_cast<std::size_t>(start) * cols,
                                x.data().begin() + static_cast<std::size_t>(start + len) * cols);
        return make_op("slice", {len, cols}, std::move(out), {x},
                       [start, len, cols](const Node& self, const std::vector<double>& g,
                                          GradTable& grads) {
                           const Node* nx = self.inputs[0].get();
                           if (!nx->requires_grad) return;
                           std::vector<double> dx(nx->data.size(), 0.0);
                           std::copy_n(g.data(), static_cast<std::size_t>(len) * cols,
                                       dx.data() + static_cast<std::size_t>(start) * cols);
                           accumulate(grads, nx, dx);
                       });
    }
    require(start >= 0 && start + len <= cols, ErrorCode::invalid_argument,
            "slice: column range out of bounds");
    std::vector<double> out(static_cast<std::size_t>(rows) * len);
    for (int i = 0; i < rows; ++i)
        std::copy_n(x.data().data() + static_cast<std::size_t>(i) * cols + start, len,
                    out.data() + static_cast<std::size_t>(i) * len);
    return make_op("slice", {rows, len}, std::move(out), {x},
                   [rows, cols, start, len](const Node& self, const std::vector<double>& g,
                                            GradTable& grads) {
                       const Node* nx = self.inputs[0].get();
                       if (!nx->requires_grad) return;
                       std::vector<double> dx(nx->data.size(), 0.0);
                       for (int i = 0; i < rows; ++i)
                           std::copy_n(g.data() + static_cast<std::size_t>(i) * len, len,
                                       dx.data() + static_cast<std::size_t>(i) * cols + start);
                       accumulate(grads, nx, dx);
                   });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    require(shape_size(new_shape) == x.size(), ErrorCode::shape_mismatch,
            "reshape: element count mismatch");
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_op("reshape", std::move(new_shape), std::move(out), {x},
                   [](const Node& self, const std::vector<double>& g, GradTable& grads) {
                       accumulate(grads, self.inputs[0].get(), g);
                   });
}

}  // namespace steerlab::grad
