#include "mtltxt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mtltxt/error.hpp"

namespace mtltxt {

namespace {

constexpr double kLogFloor = 1e-12;

double activate(Activation act, double x) {
  switch (act) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

// Derivative expressed through the pre-activation.
double activate_grad(Activation act, double pre) {
  switch (act) {
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

void stable_softmax(const std::vector<double>& z, std::vector<double>& out) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

}  // namespace

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::IndexInput: return "index_input";
    case OpKind::TensorInput: return "tensor_input";
    case OpKind::EmbedLookup: return "embed_lookup";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::GlobalMaxPool: return "global_maxpool";
    case OpKind::WindowedMaxPool: return "windowed_maxpool";
    case OpKind::Dense: return "dense";
    case OpKind::Softmax: return "softmax";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::AttentionPool: return "attention_pool";
    case OpKind::Concat: return "concat";
    case OpKind::Flatten: return "flatten";
    case OpKind::Add: return "add";
  }
  return "?";
}

ParamId ParamStore::add(const std::string& name, Tensor tensor) {
  if (by_name_.count(name)) fail_config("duplicate parameter name '" + name + "'");
  ParamId id = static_cast<ParamId>(params_.size());
  params_.push_back(std::move(tensor));
  names_.push_back(name);
  by_name_.emplace(name, id);
  return id;
}

bool ParamStore::contains(const std::string& name) const { return by_name_.count(name) > 0; }

ParamId ParamStore::id_of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) fail_config("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grads() {
  for (Tensor& p : params_) {
    if (p.trainable()) p.zero_grad();
  }
}

std::size_t ParamStore::trainable_value_count() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) {
    if (p.trainable()) n += p.numel();
  }
  return n;
}

std::vector<double> ParamStore::snapshot_trainable() const {
  std::vector<double> snap;
  snap.reserve(trainable_value_count());
  for (const Tensor& p : params_) {
    if (p.trainable()) snap.insert(snap.end(), p.values().begin(), p.values().end());
  }
  return snap;
}

void ParamStore::restore_trainable(const std::vector<double>& snapshot) {
  std::size_t pos = 0;
  for (Tensor& p : params_) {
    if (!p.trainable()) continue;
    if (pos + p.numel() > snapshot.size()) fail_data("trainable snapshot size mismatch");
    std::copy(snapshot.begin() + pos, snapshot.begin() + pos + p.numel(), p.values().begin());
    pos += p.numel();
  }
  if (pos != snapshot.size()) fail_data("trainable snapshot size mismatch");
}

std::uint64_t ParamStore::value_hash(ParamId id) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double v : params_[id].values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

Graph::Graph(std::shared_ptr<ParamStore> store) : store_(std::move(store)) {
  if (!store_) fail_config("graph requires a parameter store");
}

NodeId Graph::push(Node node) {
  NodeId id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(std::move(node));
  return id;
}

void Graph::check_rank(NodeId id, std::size_t rank, const std::string& context) const {
  const Tensor& t = nodes_[id].out;
  if (t.rank() != rank) {
    fail_data(context + ": expected rank-" + std::to_string(rank) + " input, got " +
              t.shape_string());
  }
}

NodeId Graph::add_index_input(const std::string& name, std::size_t length) {
  if (inputs_by_name_.count(name)) fail_config("duplicate graph input '" + name + "'");
  Node n;
  n.kind = OpKind::IndexInput;
  n.label = name;
  n.out = Tensor({length});
  NodeId id = push(std::move(n));
  inputs_by_name_.emplace(name, id);
  return id;
}

NodeId Graph::add_tensor_input(const std::string& name, std::vector<std::size_t> shape) {
  if (inputs_by_name_.count(name)) fail_config("duplicate graph input '" + name + "'");
  Node n;
  n.kind = OpKind::TensorInput;
  n.label = name;
  n.out = Tensor(std::move(shape));
  NodeId id = push(std::move(n));
  inputs_by_name_.emplace(name, id);
  return id;
}

NodeId Graph::embed_lookup(ParamId table, NodeId indices, bool static_padding) {
  const Tensor& t = store_->param(table);
  if (t.rank() != 2) fail_data("embed_lookup: table must be rank 2, got " + t.shape_string());
  if (nodes_[indices].kind != OpKind::IndexInput) {
    fail_data("embed_lookup: indices must come from an index input");
  }
  Node n;
  n.kind = OpKind::EmbedLookup;
  n.inputs = {indices};
  n.params = {table};
  n.static_padding = static_padding;
  n.out = Tensor({nodes_[indices].out.numel(), t.extent(1)});
  return push(std::move(n));
}

NodeId Graph::conv1d(NodeId input, ParamId filters, ParamId bias, std::size_t stride,
                     Activation act, const std::string& label) {
  check_rank(input, 2, label);
  const Tensor& f = store_->param(filters);
  const Tensor& b = store_->param(bias);
  if (f.rank() != 3) fail_data(label + ": filters must be rank 3, got " + f.shape_string());
  const std::size_t len = nodes_[input].out.extent(0);
  const std::size_t width = nodes_[input].out.extent(1);
  const std::size_t n_filters = f.extent(0);
  const std::size_t window = f.extent(1);
  if (f.extent(2) != width) {
    fail_data(label + ": filter width " + f.shape_string() + " does not match input " +
              nodes_[input].out.shape_string());
  }
  if (b.rank() != 1 || b.extent(0) != n_filters) {
    fail_data(label + ": bias " + b.shape_string() + " does not match filter count " +
              std::to_string(n_filters));
  }
  if (stride < 1) fail_data(label + ": stride must be positive");
  if (len < window) {
    fail_data(label + ": sequence of length " + std::to_string(len) +
              " is shorter than window " + std::to_string(window));
  }
  Node n;
  n.kind = OpKind::Conv1d;
  n.label = label;
  n.inputs = {input};
  n.params = {filters, bias};
  n.stride = stride;
  n.act = act;
  n.out = Tensor({(len - window) / stride + 1, n_filters});
  return push(std::move(n));
}

NodeId Graph::global_maxpool(NodeId input, const std::string& label) {
  check_rank(input, 2, label);
  if (nodes_[input].out.extent(0) == 0) fail_data(label + ": empty input");
  Node n;
  n.kind = OpKind::GlobalMaxPool;
  n.label = label;
  n.inputs = {input};
  n.out = Tensor({nodes_[input].out.extent(1)});
  return push(std::move(n));
}

NodeId Graph::windowed_maxpool(NodeId input, std::size_t window, const std::string& label) {
  check_rank(input, 2, label);
  if (window < 1) fail_data(label + ": window must be positive");
  const std::size_t len = nodes_[input].out.extent(0);
  if (len == 0) fail_data(label + ": empty input");
  Node n;
  n.kind = OpKind::WindowedMaxPool;
  n.label = label;
  n.inputs = {input};
  n.window = window;
  n.out = Tensor({(len + window - 1) / window, nodes_[input].out.extent(1)});
  return push(std::move(n));
}

NodeId Graph::dense(NodeId input, ParamId weights, ParamId bias, Activation act,
                    const std::string& label) {
  check_rank(input, 1, label);
  const Tensor& w = store_->param(weights);
  const Tensor& b = store_->param(bias);
  if (w.rank() != 2 || w.extent(1) != nodes_[input].out.extent(0)) {
    fail_data(label + ": weight shape " + w.shape_string() + " does not match input " +
              nodes_[input].out.shape_string());
  }
  if (b.rank() != 1 || b.extent(0) != w.extent(0)) {
    fail_data(label + ": bias shape " + b.shape_string() + " does not match weights " +
              w.shape_string());
  }
  Node n;
  n.kind = OpKind::Dense;
  n.label = label;
  n.inputs = {input};
  n.params = {weights, bias};
  n.act = act;
  n.out = Tensor({w.extent(0)});
  return push(std::move(n));
}

NodeId Graph::softmax(NodeId input) {
  check_rank(input, 1, "softmax");
  if (nodes_[input].out.numel() < 1) fail_data("softmax: empty input");
  Node n;
  n.kind = OpKind::Softmax;
  n.inputs = {input};
  n.out = Tensor({nodes_[input].out.extent(0)});
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId pred, NodeId truth) {
  check_rank(pred, 1, "cross_entropy");
  check_rank(truth, 1, "cross_entropy");
  if (nodes_[pred].out.numel() != nodes_[truth].out.numel()) {
    fail_data("cross_entropy: prediction " + nodes_[pred].out.shape_string() +
              " and truth " + nodes_[truth].out.shape_string() + " disagree");
  }
  Node n;
  n.kind = OpKind::CrossEntropy;
  n.inputs = {pred, truth};
  n.out = Tensor({1});
  return push(std::move(n));
}

NodeId Graph::attention_pool(NodeId hidden, ParamId weights, ParamId bias) {
  check_rank(hidden, 2, "attention_pool");
  if (nodes_[hidden].out.extent(0) == 0) fail_data("attention_pool: empty input");
  const Tensor& w = store_->param(weights);
  const Tensor& b = store_->param(bias);
  if (w.rank() != 1 || w.extent(0) != nodes_[hidden].out.extent(1)) {
    fail_data("attention_pool: weight shape " + w.shape_string() +
              " does not match hidden " + nodes_[hidden].out.shape_string());
  }
  if (b.numel() != 1) fail_data("attention_pool: bias must be a scalar");
  Node n;
  n.kind = OpKind::AttentionPool;
  n.inputs = {hidden};
  n.params = {weights, bias};
  n.out = Tensor({nodes_[hidden].out.extent(1)});
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& inputs, std::size_t axis) {
  if (inputs.empty()) fail_data("concat: no inputs");
  const std::size_t rank = nodes_[inputs[0]].out.rank();
  if (rank != 1 && rank != 2) fail_data("concat: only rank 1 or 2 supported");
  if (axis >= rank) fail_data("concat: axis out of range");
  std::size_t total = 0;
  for (NodeId id : inputs) {
    const Tensor& t = nodes_[id].out;
    if (t.rank() != rank) fail_data("concat: mixed ranks");
    for (std::size_t a = 0; a < rank; ++a) {
      if (a != axis && t.shape()[a] != nodes_[inputs[0]].out.shape()[a]) {
        fail_data("concat: extent mismatch between " + nodes_[inputs[0]].out.shape_string() +
                  " and " + t.shape_string() + " on axis " + std::to_string(a));
      }
    }
    total += t.shape()[axis];
  }
  Node n;
  n.kind = OpKind::Concat;
  n.inputs = inputs;
  n.axis = axis;
  std::vector<std::size_t> shape = nodes_[inputs[0]].out.shape();
  shape[axis] = total;
  n.out = Tensor(std::move(shape));
  return push(std::move(n));
}

NodeId Graph::flatten(NodeId input) {
  check_rank(input, 2, "flatten");
  Node n;
  n.kind = OpKind::Flatten;
  n.inputs = {input};
  n.out = Tensor({nodes_[input].out.numel()});
  return push(std::move(n));
}

NodeId Graph::add(const std::vector<NodeId>& inputs) {
  if (inputs.empty()) fail_data("add: no inputs");
  const Tensor& first = nodes_[inputs[0]].out;
  for (NodeId id : inputs) {
    if (nodes_[id].out.shape() != first.shape()) {
      fail_data("add: shape mismatch between " + first.shape_string() + " and " +
                nodes_[id].out.shape_string());
    }
  }
  Node n;
  n.kind = OpKind::Add;
  n.inputs = inputs;
  n.out = Tensor(first.shape());
  return push(std::move(n));
}

void Graph::bind_indices(const std::string& name, const std::vector<int>& ids) {
  auto it = inputs_by_name_.find(name);
  if (it == inputs_by_name_.end()) fail_data("unknown graph input '" + name + "'");
  Node& n = nodes_[it->second];
  if (n.kind != OpKind::IndexInput) fail_data("input '" + name + "' is not an index input");
  if (ids.size() != n.out.numel()) {
    fail_data("input '" + name + "' expects " + std::to_string(n.out.numel()) +
              " indices, got " + std::to_string(ids.size()));
  }
  n.indices = ids;
  n.bound = true;
}

void Graph::bind_tensor(const std::string& name, const Tensor& values) {
  auto it = inputs_by_name_.find(name);
  if (it == inputs_by_name_.end()) fail_data("unknown graph input '" + name + "'");
  Node& n = nodes_[it->second];
  if (n.kind != OpKind::TensorInput) fail_data("input '" + name + "' is not a tensor input");
  if (values.shape() != n.out.shape()) {
    fail_data("input '" + name + "' expects shape " + n.out.shape_string() + ", got " +
              values.shape_string());
  }
  n.out.values() = values.values();
  n.bound = true;
}

void Graph::forward() {
  if (nodes_.empty()) fail_data("forward on empty graph");
  forward_to(static_cast<NodeId>(nodes_.size()) - 1);
}

void Graph::forward_to(NodeId target) {
  if (target < 0 || target >= static_cast<NodeId>(nodes_.size())) {
    fail_data("forward target out of range");
  }
  for (NodeId id = 0; id <= target; ++id) compute(nodes_[id]);
  last_forward_ = target;
}

void Graph::compute(Node& node) {
  node.margin = std::numeric_limits<double>::infinity();
  switch (node.kind) {
    case OpKind::IndexInput:
    case OpKind::TensorInput: {
      if (!node.bound) fail_data("graph input '" + node.label + "' not bound");
      break;
    }
    case OpKind::EmbedLookup: {
      const Node& idx = in(node, 0);
      const Tensor& table = store_->param(node.params[0]);
      const std::size_t rows = table.extent(0);
      const std::size_t dim = table.extent(1);
      for (std::size_t i = 0; i < idx.indices.size(); ++i) {
        const int id = idx.indices[i];
        if (id < 0 || static_cast<std::size_t>(id) >= rows) {
          fail_data("embed_lookup: index " + std::to_string(id) + " at position " +
                    std::to_string(i) + " outside table of " + std::to_string(rows) + " rows");
        }
        std::copy(table.values().begin() + id * dim, table.values().begin() + (id + 1) * dim,
                  node.out.values().begin() + i * dim);
      }
      break;
    }
    case OpKind::Conv1d: {
      const Tensor& x = in(node, 0).out;
      const Tensor& f = store_->param(node.params[0]);
      const Tensor& b = store_->param(node.params[1]);
      const std::size_t width = x.extent(1);
      const std::size_t window = f.extent(1);
      const std::size_t n_filters = f.extent(0);
      const std::size_t out_len = node.out.extent(0);
      node.pre.assign(out_len * n_filters, 0.0);
      for (std::size_t i = 0; i < out_len; ++i) {
        const std::size_t base = i * node.stride;
        for (std::size_t k = 0; k < n_filters; ++k) {
          double acc = b.at(k);
          for (std::size_t w = 0; w < window; ++w) {
            const double* xr = x.values().data() + (base + w) * width;
            const double* fr = f.values().data() + (k * window + w) * width;
            for (std::size_t d = 0; d < width; ++d) acc += fr[d] * xr[d];
          }
          node.pre[i * n_filters + k] = acc;
          node.out.at(i, k) = activate(node.act, acc);
          if (node.act == Activation::Relu) node.margin = std::min(node.margin, std::abs(acc));
        }
      }
      break;
    }
    case OpKind::GlobalMaxPool:
    case OpKind::WindowedMaxPool: {
      const Tensor& x = in(node, 0).out;
      const std::size_t len = x.extent(0);
      const std::size_t width = x.extent(1);
      const std::size_t window = node.kind == OpKind::GlobalMaxPool ? len : node.window;
      const std::size_t n_windows = node.kind == OpKind::GlobalMaxPool ? 1 : node.out.extent(0);
      node.argmax.assign(n_windows * width, 0);
      for (std::size_t w = 0; w < n_windows; ++w) {
        const std::size_t lo = w * window;
        const std::size_t hi = std::min(len, lo + window);
        for (std::size_t c = 0; c < width; ++c) {
          std::size_t best = lo;
          double best_v = x.at(lo, c);
          double second = -std::numeric_limits<double>::infinity();
          for (std::size_t r = lo + 1; r < hi; ++r) {
            const double v = x.at(r, c);
            if (v > best_v) {
              second = best_v;
              best_v = v;
              best = r;
            } else {
              second = std::max(second, v);
            }
          }
          node.out.values()[w * width + c] = best_v;  // rank 1 for global: same layout
          node.argmax[w * width + c] = best;
          // Exact ties come from bitwise-identical subcomputations (repeated
          // input windows, relu-frozen zeros) and move together under any
          // parameter perturbation; only a near-tie of distinct values is a
          // kink worth rejecting probes for.
          if (hi - lo > 1 && second < best_v) {
            node.margin = std::min(node.margin, best_v - second);
          }
        }
      }
      break;
    }
    case OpKind::Dense: {
      const Tensor& x = in(node, 0).out;
      const Tensor& w = store_->param(node.params[0]);
      const Tensor& b = store_->param(node.params[1]);
      const std::size_t d_in = x.extent(0);
      const std::size_t d_out = w.extent(0);
      node.pre.assign(d_out, 0.0);
      for (std::size_t o = 0; o < d_out; ++o) {
        double acc = b.at(o);
        const double* wr = w.values().data() + o * d_in;
        for (std::size_t i = 0; i < d_in; ++i) acc += wr[i] * x.at(i);
        node.pre[o] = acc;
        node.out.at(o) = activate(node.act, acc);
        if (node.act == Activation::Relu) node.margin = std::min(node.margin, std::abs(acc));
      }
      break;
    }
    case OpKind::Softmax: {
      const Tensor& x = in(node, 0).out;
      for (double v : x.values()) {
        if (!std::isfinite(v)) fail_numeric("softmax: non-finite logit");
      }
      stable_softmax(x.values(), node.out.values());
      break;
    }
    case OpKind::CrossEntropy: {
      const Tensor& p = in(node, 0).out;
      const Tensor& y = in(node, 1).out;
      double sum = 0.0;
      bool hot = false;
      for (std::size_t i = 0; i < y.numel(); ++i) {
        const double t = y.at(i);
        if (t != 0.0 && t != 1.0) fail_data("cross_entropy: truth is not one-hot");
        if (t == 1.0) {
          if (hot) fail_data("cross_entropy: truth has multiple hot entries");
          hot = true;
        }
      }
      if (!hot) fail_data("cross_entropy: truth has no hot entry");
      for (std::size_t i = 0; i < p.numel(); ++i) {
        if (y.at(i) == 0.0) continue;
        double q = p.at(i);
        if (q < kLogFloor) {
          q = kLogFloor;
          ++floor_events_;
          node.margin = 0.0;
        }
        sum -= std::log(q);
      }
      node.out.at(0) = sum;
      break;
    }
    case OpKind::AttentionPool: {
      const Tensor& h = in(node, 0).out;
      const Tensor& w = store_->param(node.params[0]);
      const double b = store_->param(node.params[1]).at(0);
      const std::size_t len = h.extent(0);
      const std::size_t width = h.extent(1);
      node.pre.assign(len, 0.0);
      std::vector<double> scores(len);
      for (std::size_t t = 0; t < len; ++t) {
        double z = b;
        for (std::size_t d = 0; d < width; ++d) z += w.at(d) * h.at(t, d);
        node.pre[t] = z;
        scores[t] = std::tanh(z);
      }
      node.alphas.assign(len, 0.0);
      stable_softmax(scores, node.alphas);
      for (std::size_t d = 0; d < width; ++d) {
        double acc = 0.0;
        for (std::size_t t = 0; t < len; ++t) acc += node.alphas[t] * h.at(t, d);
        node.out.at(d) = acc;
      }
      break;
    }
    case OpKind::Concat: {
      if (node.out.rank() == 1 || node.axis == 0) {
        std::size_t pos = 0;
        for (NodeId id : node.inputs) {
          const Tensor& t = nodes_[id].out;
          std::copy(t.values().begin(), t.values().end(), node.out.values().begin() + pos);
          pos += t.numel();
        }
      } else {
        const std::size_t rows = node.out.extent(0);
        std::size_t col = 0;
        for (NodeId id : node.inputs) {
          const Tensor& t = nodes_[id].out;
          for (std::size_t r = 0; r < rows; ++r) {
            std::copy(t.values().begin() + r * t.extent(1),
                      t.values().begin() + (r + 1) * t.extent(1),
                      node.out.values().begin() + r * node.out.extent(1) + col);
          }
          col += t.extent(1);
        }
      }
      break;
    }
    case OpKind::Flatten: {
      node.out.values() = in(node, 0).out.values();
      break;
    }
    case OpKind::Add: {
      node.out.fill(0.0);
      for (NodeId id : node.inputs) {
        const Tensor& t = nodes_[id].out;
        for (std::size_t i = 0; i < t.numel(); ++i) node.out.at(i) += t.values()[i];
      }
      break;
    }
  }
}

void Graph::backward(NodeId loss, double seed) {
  if (loss < 0 || loss >= static_cast<NodeId>(nodes_.size())) {
    fail_data("backward target out of range");
  }
  if (last_forward_ < loss) fail_data("backward requires a forward pass first");
  if (nodes_[loss].out.numel() != 1) {
    fail_data("backward target must be scalar, got " + nodes_[loss].out.shape_string());
  }
  std::vector<char> reachable(loss + 1, 0);
  std::vector<NodeId> stack{loss};
  reachable[loss] = 1;
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    for (NodeId input : nodes_[id].inputs) {
      if (!reachable[input]) {
        reachable[input] = 1;
        stack.push_back(input);
      }
    }
  }
  for (NodeId id = 0; id <= loss; ++id) {
    if (reachable[id]) nodes_[id].out.zero_grad();
  }
  nodes_[loss].out.grad()[0] = seed;
  for (NodeId id = loss; id >= 0; --id) {
    if (reachable[id]) backprop(nodes_[id]);
  }
}

void Graph::backprop(Node& node) {
  const std::vector<double>& g = node.out.grad();
  switch (node.kind) {
    case OpKind::IndexInput:
    case OpKind::TensorInput:
      break;
    case OpKind::EmbedLookup: {
      Tensor& table = store_->param(node.params[0]);
      if (!table.trainable()) break;
      table.ensure_grad();
      const Node& idx = in(node, 0);
      const std::size_t dim = table.extent(1);
      for (std::size_t i = 0; i < idx.indices.size(); ++i) {
        const int id = idx.indices[i];
        if (node.static_padding && id == 0) continue;
        for (std::size_t d = 0; d < dim; ++d) table.grad()[id * dim + d] += g[i * dim + d];
      }
      break;
    }
    case OpKind::Conv1d: {
      Node& input = nodes_[node.inputs[0]];
      Tensor& f = store_->param(node.params[0]);
      Tensor& b = store_->param(node.params[1]);
      const Tensor& x = input.out;
      const std::size_t width = x.extent(1);
      const std::size_t window = f.extent(1);
      const std::size_t n_filters = f.extent(0);
      const std::size_t out_len = node.out.extent(0);
      const bool train_f = f.trainable();
      const bool train_b = b.trainable();
      if (train_f) f.ensure_grad();
      if (train_b) b.ensure_grad();
      for (std::size_t i = 0; i < out_len; ++i) {
        const std::size_t base = i * node.stride;
        for (std::size_t k = 0; k < n_filters; ++k) {
          const double dpre =
              g[i * n_filters + k] * activate_grad(node.act, node.pre[i * n_filters + k]);
          if (dpre == 0.0) continue;
          if (train_b) b.grad()[k] += dpre;
          for (std::size_t w = 0; w < window; ++w) {
            const double* xr = x.values().data() + (base + w) * width;
            const double* fr = f.values().data() + (k * window + w) * width;
            double* xg = input.out.grad().data() + (base + w) * width;
            for (std::size_t d = 0; d < width; ++d) {
              xg[d] += dpre * fr[d];
              if (train_f) f.grad()[(k * window + w) * width + d] += dpre * xr[d];
            }
          }
        }
      }
      break;
    }
    case OpKind::GlobalMaxPool:
    case OpKind::WindowedMaxPool: {
      Node& input = nodes_[node.inputs[0]];
      const std::size_t width = input.out.extent(1);
      const std::size_t n_windows = node.kind == OpKind::GlobalMaxPool ? 1 : node.out.extent(0);
      for (std::size_t w = 0; w < n_windows; ++w) {
        for (std::size_t c = 0; c < width; ++c) {
          input.out.grad()[node.argmax[w * width + c] * width + c] += g[w * width + c];
        }
      }
      break;
    }
    case OpKind::Dense: {
      Node& input = nodes_[node.inputs[0]];
      Tensor& w = store_->param(node.params[0]);
      Tensor& b = store_->param(node.params[1]);
      const Tensor& x = input.out;
      const std::size_t d_in = x.extent(0);
      const std::size_t d_out = w.extent(0);
      const bool train_w = w.trainable();
      const bool train_b = b.trainable();
      if (train_w) w.ensure_grad();
      if (train_b) b.ensure_grad();
      for (std::size_t o = 0; o < d_out; ++o) {
        const double dpre = g[o] * activate_grad(node.act, node.pre[o]);
        if (dpre == 0.0) continue;
        if (train_b) b.grad()[o] += dpre;
        const double* wr = w.values().data() + o * d_in;
        for (std::size_t i = 0; i < d_in; ++i) {
          input.out.grad()[i] += dpre * wr[i];
          if (train_w) w.grad()[o * d_in + i] += dpre * x.at(i);
        }
      }
      break;
    }
    case OpKind::Softmax: {
      Node& input = nodes_[node.inputs[0]];
      const std::vector<double>& y = node.out.values();
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) {
        input.out.grad()[i] += y[i] * (g[i] - dot);
      }
      break;
    }
    case OpKind::CrossEntropy: {
      Node& pred = nodes_[node.inputs[0]];
      const Tensor& y = in(node, 1).out;
      const double seed = g[0];
      for (std::size_t i = 0; i < y.numel(); ++i) {
        if (y.at(i) == 0.0) continue;
        const double q = std::max(pred.out.at(i), kLogFloor);
        pred.out.grad()[i] -= seed / q;
      }
      break;
    }
    case OpKind::AttentionPool: {
      Node& input = nodes_[node.inputs[0]];
      Tensor& w = store_->param(node.params[0]);
      Tensor& b = store_->param(node.params[1]);
      const Tensor& h = input.out;
      const std::size_t len = h.extent(0);
      const std::size_t width = h.extent(1);
      const bool train_w = w.trainable();
      const bool train_b = b.trainable();
      if (train_w) w.ensure_grad();
      if (train_b) b.ensure_grad();
      // d(out)/d(alpha_t) then back through softmax and tanh.
      std::vector<double> dalpha(len, 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        double acc = 0.0;
        for (std::size_t d = 0; d < width; ++d) acc += g[d] * h.at(t, d);
        dalpha[t] = acc;
      }
      double dot = 0.0;
      for (std::size_t t = 0; t < len; ++t) dot += dalpha[t] * node.alphas[t];
      for (std::size_t t = 0; t < len; ++t) {
        const double de = node.alphas[t] * (dalpha[t] - dot);
        const double e = std::tanh(node.pre[t]);
        const double dz = de * (1.0 - e * e);
        if (train_b) b.grad()[0] += dz;
        for (std::size_t d = 0; d < width; ++d) {
          input.out.grad()[t * width + d] += node.alphas[t] * g[d] + dz * w.at(d);
          if (train_w) w.grad()[d] += dz * h.at(t, d);
        }
      }
      break;
    }
    case OpKind::Concat: {
      if (node.out.rank() == 1 || node.axis == 0) {
        std::size_t pos = 0;
        for (NodeId id : node.inputs) {
          Node& input = nodes_[id];
          for (std::size_t i = 0; i < input.out.numel(); ++i) {
            input.out.grad()[i] += g[pos + i];
          }
          pos += input.out.numel();
        }
      } else {
        const std::size_t rows = node.out.extent(0);
        std::size_t col = 0;
        for (NodeId id : node.inputs) {
          Node& input = nodes_[id];
          const std::size_t w = input.out.extent(1);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
              input.out.grad()[r * w + c] += g[r * node.out.extent(1) + col + c];
            }
          }
          col += w;
        }
      }
      break;
    }
    case OpKind::Flatten: {
      Node& input = nodes_[node.inputs[0]];
      for (std::size_t i = 0; i < g.size(); ++i) input.out.grad()[i] += g[i];
      break;
    }
    case OpKind::Add: {
      for (NodeId id : node.inputs) {
        Node& input = nodes_[id];
        for (std::size_t i = 0; i < g.size(); ++i) input.out.grad()[i] += g[i];
      }
      break;
    }
  }
}

const std::vector<double>& Graph::attention_alphas(NodeId id) const {
  if (nodes_[id].kind != OpKind::AttentionPool) {
    fail_data("attention_alphas: node is not an attention_pool");
  }
  return nodes_[id].alphas;
}

double Graph::smoothness_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (NodeId id = 0; id <= last_forward_; ++id) m = std::min(m, nodes_[id].margin);
  return m;
}

}  // namespace mtltxt
