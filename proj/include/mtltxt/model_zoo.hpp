#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mtltxt/embeddings.hpp"
#include "mtltxt/graph.hpp"

namespace mtltxt {

struct CharConvSpec {
  std::size_t kernel1 = 4;
  std::size_t stride1 = 4;
  std::size_t pool1 = 3;
  std::size_t kernel2 = 4;
  std::size_t stride2 = 2;
  std::size_t pool2 = 3;
  std::size_t dense = 64;
};

enum class InitMode { RandomStatic, PretrainedStatic };

struct TaskSpec {
  std::string name;
  std::size_t class_count = 2;
};

// Declarative description of one of the ten variants plus its dimensions.
struct ModelSpec {
  int variant = 2;
  std::vector<std::size_t> windows = {3, 4, 5};
  std::size_t word_filters = 100;
  std::size_t char_filters = 256;
  std::size_t word_dim = 300;     // pretrained half
  std::size_t subword_dim = 300;  // character n-gram half
  std::size_t max_tokens = 100;
  std::size_t max_chars = 256;
  CharConvSpec char_conv;
  InitMode init = InitMode::PretrainedStatic;
  std::vector<TaskSpec> tasks;

  std::size_t embed_dim() const { return word_dim + subword_dim; }
  std::size_t pooled_width() const { return windows.size() * word_filters; }
  bool uses_tokens() const { return variant != 3; }
  bool uses_chars() const { return variant == 3 || variant == 4; }
  void validate() const;
};

// One runnable classifier: a graph plus the handles the trainers and
// evaluators need.
struct BuiltModel {
  explicit BuiltModel(std::shared_ptr<ParamStore> s) : store(std::move(s)), graph(store) {}

  std::shared_ptr<ParamStore> store;
  Graph graph;
  NodeId output = -1;    // softmax probabilities
  NodeId loss = -1;      // cross entropy
  NodeId features = -1;  // pooled sentence representation, when exposed
  std::vector<NodeId> attention_nodes;
  std::size_t class_count = 0;
  bool wants_tokens = false;
  bool wants_tokens_b = false;
  bool wants_chars = false;
  std::vector<std::string> warnings;

  void bind(const EncodedExample& example);
  void bind_truth(std::size_t class_slot);
};

// Fully-shared multi-task network: one embedding + conv stack with a
// softmax over the disjoint union of every task's labels.
struct SharedNetwork {
  SharedNetwork(std::shared_ptr<ParamStore> s) : net(std::move(s)) {}

  BuiltModel net;
  ModelSpec spec;
  Vocabulary vocab;
  std::vector<std::size_t> class_offsets;  // per task, into the merged softmax
  std::size_t merged_classes = 0;
  std::vector<std::string> backbone_params;  // SEL + SNN tensor names

  std::size_t merged_slot(std::size_t task, std::size_t label) const {
    return class_offsets[task] + label;
  }
};

// Soft sharing: every task owns a subnet over a shared static embedding;
// learned linear transforms exchange pooled features between subnets.
struct SoftSharedNetwork {
  std::shared_ptr<ParamStore> store;
  std::vector<BuiltModel> stl;    // per task, cross transforms absent
  std::vector<BuiltModel> share;  // per task, cross transforms wired in
  ModelSpec spec;
  Vocabulary vocab;
  std::size_t levels = 1;

  std::size_t transform_count() const;
};

BuiltModel build_word_cnn(const ModelSpec& spec, const Tensor& embed_matrix,
                          std::uint64_t seed);  // variants 1 and 2
BuiltModel build_char_cnn(const ModelSpec& spec, std::uint64_t seed);  // variant 3
BuiltModel build_hybrid_cnn(const ModelSpec& spec, const Tensor& embed_matrix,
                            std::uint64_t seed);  // variant 4
BuiltModel build_attention_cnn(const ModelSpec& spec, const Tensor& embed_matrix,
                               std::uint64_t seed);  // variant 5

SharedNetwork build_shared_network(const ModelSpec& spec, const Vocabulary& vocab,
                                   const Tensor& embed_matrix, std::uint64_t seed);
BuiltModel derive_task_head(const SharedNetwork& sn, const std::string& task,
                            std::size_t class_count, std::uint64_t seed);
BuiltModel build_concat_model(const SharedNetwork& sn_a, const SharedNetwork& sn_b,
                              std::size_t class_count, std::uint64_t seed);  // variant 8
SoftSharedNetwork build_soft_shared(const ModelSpec& spec, const Vocabulary& vocab,
                                    const Tensor& embed_matrix,
                                    std::uint64_t seed);  // variants 9 and 10

}  // namespace mtltxt
