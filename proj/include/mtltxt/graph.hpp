#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtltxt/tensor.hpp"

namespace mtltxt {

enum class Activation { Identity, Relu, Tanh };

enum class OpKind {
  IndexInput,
  TensorInput,
  EmbedLookup,
  Conv1d,
  GlobalMaxPool,
  WindowedMaxPool,
  Dense,
  Softmax,
  CrossEntropy,
  AttentionPool,
  Concat,
  Flatten,
  Add,
};

const char* op_kind_name(OpKind kind);

using NodeId = int;
using ParamId = int;

// Named parameter tensors, shareable between graphs. Frozen (non-trainable)
// tensors are read-only shared state; gradients are only kept for trainable
// ones.
class ParamStore {
 public:
  ParamId add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const;
  ParamId id_of(const std::string& name) const;
  Tensor& param(ParamId id) { return params_[id]; }
  const Tensor& param(ParamId id) const { return params_[id]; }
  const std::string& name(ParamId id) const { return names_[id]; }
  std::size_t size() const { return params_.size(); }

  void zero_grads();
  std::size_t trainable_value_count() const;
  std::vector<double> snapshot_trainable() const;
  void restore_trainable(const std::vector<double>& snapshot);
  // FNV-1a over the little-endian bytes of the values.
  std::uint64_t value_hash(ParamId id) const;

 private:
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, ParamId> by_name_;
};

struct Node {
  OpKind kind = OpKind::TensorInput;
  std::vector<NodeId> inputs;
  std::vector<ParamId> params;
  std::string label;

  std::size_t stride = 1;
  std::size_t window = 1;
  std::size_t axis = 0;
  Activation act = Activation::Identity;
  bool static_padding = false;

  Tensor out;
  std::vector<int> indices;  // IndexInput binding
  bool bound = false;

  // forward scratch reused by backward
  std::vector<double> pre;           // pre-activations / attention scores
  std::vector<double> alphas;        // attention weights
  std::vector<std::size_t> argmax;   // pooling winners
  double margin = std::numeric_limits<double>::infinity();
};

// Computation DAG over a ParamStore. Nodes are appended in topological
// order; forward then backward visit each node exactly once. One Graph is
// single-writer; distinct graphs over distinct stores are independent.
class Graph {
 public:
  explicit Graph(std::shared_ptr<ParamStore> store);

  NodeId add_index_input(const std::string& name, std::size_t length);
  NodeId add_tensor_input(const std::string& name, std::vector<std::size_t> shape);
  NodeId embed_lookup(ParamId table, NodeId indices, bool static_padding = true);
  NodeId conv1d(NodeId input, ParamId filters, ParamId bias, std::size_t stride,
                Activation act, const std::string& label = "conv1d");
  NodeId global_maxpool(NodeId input, const std::string& label = "global_maxpool");
  NodeId windowed_maxpool(NodeId input, std::size_t window,
                          const std::string& label = "windowed_maxpool");
  NodeId dense(NodeId input, ParamId weights, ParamId bias, Activation act,
               const std::string& label = "dense");
  NodeId softmax(NodeId input);
  NodeId cross_entropy(NodeId pred, NodeId truth);
  NodeId attention_pool(NodeId hidden, ParamId weights, ParamId bias);
  NodeId concat(const std::vector<NodeId>& inputs, std::size_t axis = 0);
  NodeId flatten(NodeId input);
  NodeId add(const std::vector<NodeId>& inputs);

  void bind_indices(const std::string& name, const std::vector<int>& ids);
  void bind_tensor(const std::string& name, const Tensor& values);

  void forward();
  void forward_to(NodeId target);
  // Seeds the scalar at `loss` with `seed` and accumulates parameter
  // gradients (existing parameter grads are kept, so per-sample backward
  // passes sum into a batch gradient).
  void backward(NodeId loss, double seed = 1.0);
  void zero_param_grads() { store_->zero_grads(); }

  const Tensor& value(NodeId id) const { return nodes_[id].out; }
  const std::vector<double>& attention_alphas(NodeId id) const;
  // Smallest distance to a relu/maxpool kink (or log floor) seen by the
  // last forward; finite-difference probes reject when this is small.
  double smoothness_margin() const;
  std::uint64_t floor_events() const { return floor_events_; }

  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const std::shared_ptr<ParamStore>& store() const { return store_; }

  void set_output(NodeId id) { output_ = id; }
  NodeId output() const { return output_; }
  void set_loss(NodeId id) { loss_ = id; }
  NodeId loss() const { return loss_; }

  std::size_t node_count() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }

 private:
  NodeId push(Node node);
  const Node& in(const Node& node, std::size_t i) const { return nodes_[node.inputs[i]]; }
  void compute(Node& node);
  void backprop(Node& node);
  void check_rank(NodeId id, std::size_t rank, const std::string& context) const;

  std::shared_ptr<ParamStore> store_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> inputs_by_name_;
  NodeId output_ = -1;
  NodeId loss_ = -1;
  NodeId last_forward_ = -1;
  std::uint64_t floor_events_ = 0;
};

}  // namespace mtltxt
