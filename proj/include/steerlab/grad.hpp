#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace steerlab::grad {

using Shape = std::vector<int>;

int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
class GradTable;

using BackwardFn =
    std::function<void(const Node& self, const std::vector<double>& gout, GradTable& grads)>;

// One dense value in the computation graph. Owned via shared_ptr; Tensor is
// the value-semantics handle. Data is 64-bit row-major, finite by invariant.
struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward_fn;

    bool on_graph() const { return static_cast<bool>(backward_fn); }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    bool requires_grad() const;
    bool is_leaf() const;
    std::span<const double> data() const;
    // In-place mutation is allowed on leaves only (optimizer updates).
    std::span<double> mutable_data();
    double item() const;
    double at(int64_t i) const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

  private:
    std::shared_ptr<Node> node_;
};

// Gradient buffers keyed on tensor identity. Entries exist only for tensors
// reachable from the backward root that require grad.
class GradTable {
  public:
    bool contains(const Tensor& t) const;
    const std::vector<double>* find(const Tensor& t) const;
    // Gradient as a constant tensor of the source's shape; error if absent.
    Tensor grad(const Tensor& t) const;
    std::size_t size() const { return grads_.size(); }

    // Internal accumulation hooks used by op backward functions.
    std::vector<double>& slot(const Node* node);
    const std::vector<double>* find_node(const Node* node) const;

  private:
    std::unordered_map<const Node*, std::vector<double>> grads_;
};

// Reverse-mode sweep from a [1]-shaped output. Single use per graph: a second
// call through already-visited nodes raises an error.
GradTable backward(const Tensor& scalar_output);

// While alive, ops compute values but record no graph edges; outputs never
// require grad. Nestable.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

// Ops. Supported ranks are 1 and 2 unless stated otherwise; no implicit
// broadcasting beyond the rules written next to each op.
Tensor matmul(const Tensor& a, const Tensor& b);          // [a,b]x[b,c] -> [a,c]
Tensor add(const Tensor& a, const Tensor& b);             // same shape, or [n,d]+[d]
Tensor scale(const Tensor& a, double c);                  // elementwise a*c
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);  // [V,d],[n] -> [n,d]
Tensor layer_norm(const Tensor& x);                       // per-row, eps 1e-5, no affine
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor softmax(const Tensor& x);                          // last dim, max-subtracted
Tensor log_softmax(const Tensor& x);                      // last dim, stable
Tensor gelu(const Tensor& x);                             // exact erf form
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v);  // [n,dh]
Tensor mean_pool(const Tensor& x);                        // [n,d] -> [d]; [n] -> [1]
Tensor cosine(const Tensor& a, const Tensor& b);          // [d],[d] -> [1]; zero norm -> 0
Tensor mse(const Tensor& a, const Tensor& b);             // mean squared error -> [1]
Tensor log(const Tensor& x);                              // elementwise, domain-checked
Tensor exp(const Tensor& x);                              // elementwise
Tensor concat(const Tensor& a, const Tensor& b, int dim = 0);
Tensor slice(const Tensor& x, int dim, int start, int len);
Tensor reshape(const Tensor& x, Shape new_shape);

constexpr double kLayerNormEps = 1e-5;

}  // namespace steerlab::grad
