#include "mtltxt/model_zoo.hpp"

#include <algorithm>
#include <set>

#include "mtltxt/error.hpp"
#include "mtltxt/init.hpp"

namespace mtltxt {

namespace {

struct WordStackParams {
  std::vector<ParamId> filters;
  std::vector<ParamId> biases;
  std::vector<ParamId> attn_w;
  std::vector<ParamId> attn_b;
};

// Creates the conv (and optional attention) parameters of one word stack.
WordStackParams make_word_stack_params(ParamStore& store, const std::string& prefix,
                                       const ModelSpec& spec, bool attention, Rng& rng) {
  WordStackParams params;
  for (std::size_t h : spec.windows) {
    Tensor filters({spec.word_filters, h, spec.embed_dim()});
    filters.set_trainable(true);
    xavier_uniform(filters, h * spec.embed_dim(), spec.word_filters, rng);
    Tensor bias({spec.word_filters});
    bias.set_trainable(true);
    const std::string base = prefix + "conv.w" + std::to_string(h);
    params.filters.push_back(store.add(base + ".filters", std::move(filters)));
    params.biases.push_back(store.add(base + ".bias", std::move(bias)));
    if (attention) {
      Tensor aw({spec.word_filters});
      aw.set_trainable(true);
      xavier_uniform(aw, spec.word_filters, 1, rng);
      Tensor ab({1});
      ab.set_trainable(true);
      const std::string abase = prefix + "attn.w" + std::to_string(h);
      params.attn_w.push_back(store.add(abase + ".w", std::move(aw)));
      params.attn_b.push_back(store.add(abase + ".b", std::move(ab)));
    }
  }
  return params;
}

// Wires embed -> conv per window -> pool -> concat; returns the pooled
// feature node.
NodeId wire_word_stack(Graph& graph, NodeId embedded, const WordStackParams& params,
                       const ModelSpec& spec, const std::string& label,
                       std::vector<NodeId>* attention_nodes) {
  std::vector<NodeId> pooled;
  for (std::size_t i = 0; i < spec.windows.size(); ++i) {
    NodeId conv = graph.conv1d(embedded, params.filters[i], params.biases[i], 1,
                               Activation::Relu,
                               label + "conv.w" + std::to_string(spec.windows[i]));
    if (!params.attn_w.empty()) {
      NodeId att = graph.attention_pool(conv, params.attn_w[i], params.attn_b[i]);
      if (attention_nodes) attention_nodes->push_back(att);
      pooled.push_back(att);
    } else {
      pooled.push_back(graph.global_maxpool(conv, label + "pool.w" +
                                                      std::to_string(spec.windows[i])));
    }
  }
  return pooled.size() == 1 ? pooled.front() : graph.concat(pooled);
}

ParamId add_dense(ParamStore& store, const std::string& prefix, std::size_t d_out,
                  std::size_t d_in, Rng& rng, ParamId* bias_out, bool trainable = true) {
  Tensor w({d_out, d_in});
  w.set_trainable(trainable);
  xavier_uniform(w, d_in, d_out, rng);
  Tensor b({d_out});
  b.set_trainable(trainable);
  ParamId wid = store.add(prefix + ".w", std::move(w));
  *bias_out = store.add(prefix + ".b", std::move(b));
  return wid;
}

// Head = dense -> softmax -> cross entropy against a bound truth vector.
void finish_with_head(BuiltModel& model, NodeId features, ParamId head_w, ParamId head_b,
                      std::size_t classes) {
  NodeId logits = model.graph.dense(features, head_w, head_b, Activation::Identity, "head");
  NodeId probs = model.graph.softmax(logits);
  NodeId truth = model.graph.add_tensor_input("truth", {classes});
  model.loss = model.graph.cross_entropy(probs, truth);
  model.output = probs;
  model.class_count = classes;
}

// Char channel of models 3 and 4 up to the flattened pooled features.
NodeId wire_char_stack(BuiltModel& model, const ModelSpec& spec, const std::string& prefix,
                       Rng& rng) {
  ParamStore& store = *model.store;
  const CharConvSpec& cc = spec.char_conv;
  Tensor f1({spec.char_filters, cc.kernel1, 27});
  f1.set_trainable(true);
  xavier_uniform(f1, cc.kernel1 * 27, spec.char_filters, rng);
  Tensor b1({spec.char_filters});
  b1.set_trainable(true);
  ParamId f1id = store.add(prefix + "conv1.filters", std::move(f1));
  ParamId b1id = store.add(prefix + "conv1.bias", std::move(b1));
  Tensor f2({spec.char_filters, cc.kernel2, spec.char_filters});
  f2.set_trainable(true);
  xavier_uniform(f2, cc.kernel2 * spec.char_filters, spec.char_filters, rng);
  Tensor b2({spec.char_filters});
  b2.set_trainable(true);
  ParamId f2id = store.add(prefix + "conv2.filters", std::move(f2));
  ParamId b2id = store.add(prefix + "conv2.bias", std::move(b2));

  NodeId chars = model.graph.add_tensor_input("chars", {spec.max_chars, 27});
  NodeId c1 = model.graph.conv1d(chars, f1id, b1id, cc.stride1, Activation::Relu,
                                 prefix + "conv1");
  NodeId p1 = model.graph.windowed_maxpool(c1, cc.pool1, prefix + "pool1");
  NodeId c2 = model.graph.conv1d(p1, f2id, b2id, cc.stride2, Activation::Relu,
                                 prefix + "conv2");
  NodeId p2 = model.graph.windowed_maxpool(c2, cc.pool2, prefix + "pool2");
  model.wants_chars = true;
  return model.graph.flatten(p2);
}

BuiltModel build_word_variant(const ModelSpec& spec, const Tensor& embed_matrix,
                              std::uint64_t seed, bool attention) {
  spec.validate();
  if (spec.tasks.size() != 1) fail_config("single-task variant expects exactly one task");
  if (embed_matrix.rank() != 2 || embed_matrix.extent(1) != spec.embed_dim()) {
    fail_config("embedding matrix " + embed_matrix.shape_string() +
                " does not match embed dim " + std::to_string(spec.embed_dim()));
  }
  auto store = std::make_shared<ParamStore>();
  Rng rng(derive_seed(seed, "word_cnn.init"));
  ParamId table = store->add("embed.table", embed_matrix);
  WordStackParams stack = make_word_stack_params(*store, "", spec, attention, rng);
  const std::size_t classes = spec.tasks[0].class_count;
  ParamId head_b = -1;
  ParamId head_w = add_dense(*store, "head", classes, spec.pooled_width(), rng, &head_b);

  BuiltModel model(store);
  NodeId tokens = model.graph.add_index_input("tokens", spec.max_tokens);
  NodeId embedded = model.graph.embed_lookup(table, tokens);
  model.features = wire_word_stack(model.graph, embedded, stack, spec, "",
                                   &model.attention_nodes);
  finish_with_head(model, model.features, head_w, head_b, classes);
  model.wants_tokens = true;
  return model;
}

void copy_frozen(const ParamStore& from, ParamStore& to,
                 const std::vector<std::string>& names, const std::string& prefix = "") {
  for (const std::string& name : names) {
    Tensor copy = from.param(from.id_of(name));
    copy.set_trainable(false);
    to.add(prefix + name, std::move(copy));
  }
}

}  // namespace

void ModelSpec::validate() const {
  if (variant < 1 || variant > 10) fail_config("model variant must be in [1, 10]");
  if (tasks.empty()) fail_config("model spec has no tasks");
  for (const TaskSpec& task : tasks) {
    if (task.class_count < 2) {
      fail_config("task '" + task.name + "' needs at least two classes");
    }
  }
  if (windows.empty()) fail_config("model spec needs at least one window size");
  if (word_filters < 1 || char_filters < 1) fail_config("filter counts must be positive");
  if (variant == 1 && init != InitMode::RandomStatic) {
    fail_config("variant 1 uses random static embeddings");
  }
  if (variant >= 6 && tasks.size() < 2) {
    fail_config("variant " + std::to_string(variant) + " needs at least two tasks");
  }
  std::set<std::string> names;
  for (const TaskSpec& task : tasks) {
    if (!names.insert(task.name).second) {
      fail_config("duplicate task id '" + task.name + "'");
    }
  }
}

void BuiltModel::bind(const EncodedExample& example) {
  if (wants_tokens) graph.bind_indices("tokens", example.token_ids);
  if (wants_tokens_b) graph.bind_indices("tokens_b", example.token_ids_b);
  if (wants_chars) graph.bind_tensor("chars", example.char_one_hot);
}

void BuiltModel::bind_truth(std::size_t class_slot) {
  if (class_slot >= class_count) fail_data("truth slot outside the class range");
  Tensor y({class_count});
  y.at(class_slot) = 1.0;
  graph.bind_tensor("truth", y);
}

std::size_t SoftSharedNetwork::transform_count() const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < store->size(); ++i) {
    const std::string& name = store->name(static_cast<ParamId>(i));
    if (name.rfind("xform.", 0) == 0 && name.size() > 2 &&
        name.compare(name.size() - 2, 2, ".w") == 0) {
      ++count;
    }
  }
  return count;
}

BuiltModel build_word_cnn(const ModelSpec& spec, const Tensor& embed_matrix,
                          std::uint64_t seed) {
  return build_word_variant(spec, embed_matrix, seed, /*attention=*/false);
}

BuiltModel build_attention_cnn(const ModelSpec& spec, const Tensor& embed_matrix,
                               std::uint64_t seed) {
  return build_word_variant(spec, embed_matrix, seed, /*attention=*/true);
}

BuiltModel build_char_cnn(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.tasks.size() != 1) fail_config("single-task variant expects exactly one task");
  auto store = std::make_shared<ParamStore>();
  Rng rng(derive_seed(seed, "char_cnn.init"));
  BuiltModel model(store);
  NodeId flat = wire_char_stack(model, spec, "char.", rng);
  ParamId fc_b = -1;
  ParamId fc_w = add_dense(*store, "char.fc", spec.char_conv.dense,
                           model.graph.value(flat).numel(), rng, &fc_b);
  NodeId fc = model.graph.dense(flat, fc_w, fc_b, Activation::Relu, "char.fc");
  const std::size_t classes = spec.tasks[0].class_count;
  ParamId head_b = -1;
  ParamId head_w = add_dense(*store, "head", classes, spec.char_conv.dense, rng, &head_b);
  finish_with_head(model, fc, head_w, head_b, classes);
  return model;
}

BuiltModel build_hybrid_cnn(const ModelSpec& spec, const Tensor& embed_matrix,
                            std::uint64_t seed) {
  spec.validate();
  if (spec.tasks.size() != 1) fail_config("single-task variant expects exactly one task");
  auto store = std::make_shared<ParamStore>();
  Rng rng(derive_seed(seed, "hybrid_cnn.init"));
  ParamId table = store->add("embed.table", embed_matrix);
  WordStackParams stack = make_word_stack_params(*store, "", spec, /*attention=*/false, rng);

  BuiltModel model(store);
  NodeId tokens = model.graph.add_index_input("tokens", spec.max_tokens);
  NodeId embedded = model.graph.embed_lookup(table, tokens);
  NodeId word_features = wire_word_stack(model.graph, embedded, stack, spec, "", nullptr);
  NodeId char_features = wire_char_stack(model, spec, "char.", rng);
  NodeId both = model.graph.concat({word_features, char_features});
  model.features = both;

  const std::size_t classes = spec.tasks[0].class_count;
  ParamId head_b = -1;
  ParamId head_w =
      add_dense(*store, "head", classes, model.graph.value(both).numel(), rng, &head_b);
  finish_with_head(model, both, head_w, head_b, classes);
  model.wants_tokens = true;
  return model;
}

SharedNetwork build_shared_network(const ModelSpec& spec, const Vocabulary& vocab,
                                   const Tensor& embed_matrix, std::uint64_t seed) {
  spec.validate();
  if (spec.tasks.size() < 2) fail_config("a shared network needs at least two tasks");
  auto store = std::make_shared<ParamStore>();
  Rng rng(derive_seed(seed, "shared_network.init"));
  ParamId table = store->add("embed.table", embed_matrix);
  WordStackParams stack = make_word_stack_params(*store, "", spec, /*attention=*/false, rng);

  SharedNetwork sn(store);
  sn.spec = spec;
  sn.vocab = vocab;
  std::size_t offset = 0;
  for (const TaskSpec& task : spec.tasks) {
    sn.class_offsets.push_back(offset);
    offset += task.class_count;
  }
  sn.merged_classes = offset;

  ParamId sdl_b = -1;
  ParamId sdl_w = add_dense(*store, "head", offset, spec.pooled_width(), rng, &sdl_b);

  BuiltModel& net = sn.net;
  NodeId tokens = net.graph.add_index_input("tokens", spec.max_tokens);
  NodeId embedded = net.graph.embed_lookup(table, tokens);
  net.features = wire_word_stack(net.graph, embedded, stack, spec, "", nullptr);
  finish_with_head(net, net.features, sdl_w, sdl_b, offset);
  net.wants_tokens = true;

  sn.backbone_params.push_back("embed.table");
  for (std::size_t h : spec.windows) {
    sn.backbone_params.push_back("conv.w" + std::to_string(h) + ".filters");
    sn.backbone_params.push_back("conv.w" + std::to_string(h) + ".bias");
  }
  return sn;
}

BuiltModel derive_task_head(const SharedNetwork& sn, const std::string& task,
                            std::size_t class_count, std::uint64_t seed) {
  auto store = std::make_shared<ParamStore>();
  copy_frozen(*sn.net.store, *store, sn.backbone_params);
  Rng rng(derive_seed(seed, "task_head.init"));
  ParamId head_b = -1;
  ParamId head_w = add_dense(*store, "head", class_count, sn.spec.pooled_width(), rng,
                             &head_b);

  BuiltModel model(store);
  const bool known = std::any_of(sn.spec.tasks.begin(), sn.spec.tasks.end(),
                                 [&](const TaskSpec& t) { return t.name == task; });
  if (!known) {
    model.warnings.push_back("task '" + task + "' was not part of the shared training set");
  }
  NodeId tokens = model.graph.add_index_input("tokens", sn.spec.max_tokens);
  NodeId embedded = model.graph.embed_lookup(store->id_of("embed.table"), tokens);
  WordStackParams stack;
  for (std::size_t h : sn.spec.windows) {
    stack.filters.push_back(store->id_of("conv.w" + std::to_string(h) + ".filters"));
    stack.biases.push_back(store->id_of("conv.w" + std::to_string(h) + ".bias"));
  }
  model.features = wire_word_stack(model.graph, embedded, stack, sn.spec, "", nullptr);
  finish_with_head(model, model.features, head_w, head_b, class_count);
  model.wants_tokens = true;
  return model;
}

BuiltModel build_concat_model(const SharedNetwork& sn_a, const SharedNetwork& sn_b,
                              std::size_t class_count, std::uint64_t seed) {
  if (sn_a.spec.max_tokens != sn_b.spec.max_tokens) {
    fail_config("backbones disagree on sequence length");
  }
  auto store = std::make_shared<ParamStore>();
  copy_frozen(*sn_a.net.store, *store, sn_a.backbone_params, "a.");
  copy_frozen(*sn_b.net.store, *store, sn_b.backbone_params, "b.");
  Rng rng(derive_seed(seed, "concat_head.init"));
  const std::size_t width = sn_a.spec.pooled_width() + sn_b.spec.pooled_width();
  ParamId head_b = -1;
  ParamId head_w = add_dense(*store, "head", class_count, width, rng, &head_b);

  BuiltModel model(store);
  NodeId tokens_a = model.graph.add_index_input("tokens", sn_a.spec.max_tokens);
  NodeId tokens_b = model.graph.add_index_input("tokens_b", sn_b.spec.max_tokens);
  auto wire_backbone = [&](const SharedNetwork& sn, const std::string& prefix,
                           NodeId tokens) {
    NodeId embedded = model.graph.embed_lookup(store->id_of(prefix + "embed.table"), tokens);
    WordStackParams stack;
    for (std::size_t h : sn.spec.windows) {
      stack.filters.push_back(store->id_of(prefix + "conv.w" + std::to_string(h) +
                                           ".filters"));
      stack.biases.push_back(store->id_of(prefix + "conv.w" + std::to_string(h) + ".bias"));
    }
    return wire_word_stack(model.graph, embedded, stack, sn.spec, prefix, nullptr);
  };
  NodeId f_a = wire_backbone(sn_a, "a.", tokens_a);
  NodeId f_b = wire_backbone(sn_b, "b.", tokens_b);
  NodeId both = model.graph.concat({f_a, f_b});
  model.features = both;
  finish_with_head(model, both, head_w, head_b, class_count);
  model.wants_tokens = true;
  model.wants_tokens_b = true;
  return model;
}

SoftSharedNetwork build_soft_shared(const ModelSpec& spec, const Vocabulary& vocab,
                                    const Tensor& embed_matrix, std::uint64_t seed) {
  spec.validate();
  if (spec.tasks.size() < 2) fail_config("soft sharing needs at least two tasks");
  SoftSharedNetwork ssn;
  ssn.spec = spec;
  ssn.vocab = vocab;
  ssn.store = std::make_shared<ParamStore>();
  ParamStore& store = *ssn.store;
  Rng rng(derive_seed(seed, "soft_shared.init"));

  ParamId table = store.add("embed.table", embed_matrix);
  const std::size_t n_tasks = spec.tasks.size();
  const std::size_t width = spec.pooled_width();

  std::vector<WordStackParams> stacks;
  std::vector<ParamId> head_w(n_tasks), head_b(n_tasks);
  for (std::size_t i = 0; i < n_tasks; ++i) {
    stacks.push_back(make_word_stack_params(store, "subnet." + std::to_string(i) + ".", spec,
                                            /*attention=*/false, rng));
    head_w[i] = add_dense(store, "subnet." + std::to_string(i) + ".head",
                          spec.tasks[i].class_count, width, rng, &head_b[i]);
  }
  // cross transforms start at zero so the initial forward equals the
  // independent subnets
  std::vector<std::vector<ParamId>> xform_w(n_tasks, std::vector<ParamId>(n_tasks, -1));
  std::vector<std::vector<ParamId>> xform_b(n_tasks, std::vector<ParamId>(n_tasks, -1));
  for (std::size_t i = 0; i < n_tasks; ++i) {
    for (std::size_t j = 0; j < n_tasks; ++j) {
      if (i == j) continue;
      Tensor w({width, width});
      w.set_trainable(true);
      Tensor b({width});
      b.set_trainable(true);
      const std::string base =
          "xform." + std::to_string(i) + ".from." + std::to_string(j);
      xform_w[i][j] = store.add(base + ".w", std::move(w));
      xform_b[i][j] = store.add(base + ".b", std::move(b));
    }
  }

  for (std::size_t i = 0; i < n_tasks; ++i) {
    BuiltModel stl(ssn.store);
    NodeId tokens = stl.graph.add_index_input("tokens", spec.max_tokens);
    NodeId embedded = stl.graph.embed_lookup(table, tokens);
    NodeId features = wire_word_stack(stl.graph, embedded, stacks[i], spec,
                                      "subnet." + std::to_string(i) + ".", nullptr);
    stl.features = features;
    finish_with_head(stl, features, head_w[i], head_b[i], spec.tasks[i].class_count);
    stl.wants_tokens = true;
    ssn.stl.push_back(std::move(stl));

    BuiltModel mixed(ssn.store);
    NodeId tokens2 = mixed.graph.add_index_input("tokens", spec.max_tokens);
    NodeId embedded2 = mixed.graph.embed_lookup(table, tokens2);
    std::vector<NodeId> subnet_features(n_tasks);
    for (std::size_t j = 0; j < n_tasks; ++j) {
      subnet_features[j] = wire_word_stack(mixed.graph, embedded2, stacks[j], spec,
                                           "subnet." + std::to_string(j) + ".", nullptr);
    }
    std::vector<NodeId> terms{subnet_features[i]};
    for (std::size_t j = 0; j < n_tasks; ++j) {
      if (j == i) continue;
      terms.push_back(mixed.graph.dense(subnet_features[j], xform_w[i][j], xform_b[i][j],
                                        Activation::Identity,
                                        "xform." + std::to_string(i) + ".from." +
                                            std::to_string(j)));
    }
    NodeId combined = mixed.graph.add(terms);
    mixed.features = combined;
    finish_with_head(mixed, combined, head_w[i], head_b[i], spec.tasks[i].class_count);
    mixed.wants_tokens = true;
    ssn.share.push_back(std::move(mixed));
  }
  return ssn;
}

}  // namespace mtltxt
