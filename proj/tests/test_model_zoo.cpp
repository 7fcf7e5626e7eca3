#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtltxt/error.hpp"
#include "mtltxt/grad_check.hpp"
#include "mtltxt/model_zoo.hpp"
#include "mtltxt/rng.hpp"

using namespace mtltxt;

namespace {

ModelSpec desk_spec(int variant) {
  ModelSpec spec;
  spec.variant = variant;
  spec.windows = {2, 3};
  spec.word_filters = 4;
  spec.char_filters = 6;
  spec.word_dim = 5;
  spec.subword_dim = 3;
  spec.max_tokens = 10;
  spec.max_chars = 24;
  spec.char_conv = {3, 2, 2, 3, 1, 2, 8};
  spec.init = variant == 1 ? InitMode::RandomStatic : InitMode::PretrainedStatic;
  spec.tasks = {{"task", 2}};
  return spec;
}

Vocabulary toy_vocab(std::size_t n) {
  Vocabulary vocab;
  for (std::size_t i = 0; i < n; ++i) vocab.add("tok" + std::to_string(i));
  return vocab;
}

Tensor toy_matrix(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return random_vocab_matrix(vocab, dim, rng);
}

EncodedExample toy_example(const ModelSpec& spec, Rng& rng, std::size_t vocab_size) {
  EncodedExample ex;
  ex.token_ids.resize(spec.max_tokens);
  for (int& id : ex.token_ids) id = 2 + static_cast<int>(rng.below(vocab_size));
  ex.token_ids_b = ex.token_ids;
  std::string text;
  for (int i = 0; i < 20; ++i) text += static_cast<char>('a' + rng.below(26));
  ex.char_one_hot = char_one_hot_encode(text, spec.max_chars);
  ex.label = static_cast<int>(rng.below(2));
  return ex;
}

bool same_structure(const Graph& a, const Graph& b) {
  if (a.node_count() != b.node_count()) return false;
  for (std::size_t i = 0; i < a.node_count(); ++i) {
    if (a.node(i).kind != b.node(i).kind) return false;
    if (a.node(i).inputs != b.node(i).inputs) return false;
    if (a.node(i).out.shape() != b.node(i).out.shape()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("word cnn pooled widths") {
  ModelSpec spec = desk_spec(2);
  Vocabulary vocab = toy_vocab(8);
  BuiltModel m = build_word_cnn(spec, toy_matrix(vocab, spec.embed_dim(), 1), 42);
  CHECK(m.graph.value(m.features).numel() == spec.windows.size() * spec.word_filters);

  spec.windows = {3};
  BuiltModel single = build_word_cnn(spec, toy_matrix(vocab, spec.embed_dim(), 1), 42);
  CHECK(single.graph.value(single.features).numel() == spec.word_filters);
}

TEST_CASE("word cnn parameter count matches the closed form") {
  ModelSpec spec;
  spec.variant = 2;
  spec.windows = {3, 4, 5};
  spec.word_filters = 100;
  spec.word_dim = 300;
  spec.subword_dim = 300;
  spec.max_tokens = 12;
  spec.tasks = {{"task", 2}};
  Vocabulary vocab = toy_vocab(4);
  BuiltModel m = build_word_cnn(spec, toy_matrix(vocab, 600, 3), 1);

  // conv: 100 * (3+4+5) * 600 weights + 300 biases; head: 2*300 + 2
  std::size_t conv = 0, head = 0;
  for (std::size_t i = 0; i < m.store->size(); ++i) {
    const Tensor& p = m.store->param(static_cast<ParamId>(i));
    if (!p.trainable()) continue;
    const std::string& name = m.store->name(static_cast<ParamId>(i));
    if (name.rfind("conv.", 0) == 0) conv += p.numel();
    if (name.rfind("head.", 0) == 0) head += p.numel();
  }
  CHECK(conv == 720300);
  CHECK(head == 602);
  CHECK(m.store->trainable_value_count() == 720902);
}

TEST_CASE("word cnn rejects sequences shorter than the largest window") {
  ModelSpec spec = desk_spec(2);
  spec.max_tokens = 2;  // windows go up to 3
  Vocabulary vocab = toy_vocab(4);
  CHECK_THROWS_WITH_AS(build_word_cnn(spec, toy_matrix(vocab, spec.embed_dim(), 1), 7),
                       doctest::Contains("shorter than window"), Error);
}

TEST_CASE("variants 1 and 2 are isomorphic graphs with different tables") {
  ModelSpec random_spec = desk_spec(1);
  ModelSpec pretrained_spec = desk_spec(2);
  Vocabulary vocab = toy_vocab(6);
  BuiltModel m1 = build_word_cnn(random_spec, toy_matrix(vocab, 8, 101), 9);
  BuiltModel m2 = build_word_cnn(pretrained_spec, toy_matrix(vocab, 8, 202), 9);
  CHECK(same_structure(m1.graph, m2.graph));
  CHECK(m1.store->param(m1.store->id_of("embed.table")).values() !=
        m2.store->param(m2.store->id_of("embed.table")).values());
}

TEST_CASE("char cnn shape arithmetic at full scale") {
  ModelSpec spec;
  spec.variant = 3;
  spec.char_filters = 256;
  spec.max_chars = 256;
  spec.char_conv = {4, 4, 3, 4, 2, 3, 64};
  spec.tasks = {{"task", 2}};
  BuiltModel m = build_char_cnn(spec, 5);

  // conv1 64 rows, pool 22, conv2 10, pool 4
  std::vector<std::vector<std::size_t>> expect = {
      {64, 256}, {22, 256}, {10, 256}, {4, 256}};
  std::size_t found = 0;
  for (std::size_t i = 0; i < m.graph.node_count(); ++i) {
    const Node& n = m.graph.node(i);
    if (n.kind == OpKind::Conv1d || n.kind == OpKind::WindowedMaxPool) {
      REQUIRE(found < expect.size());
      CHECK(n.out.shape() == expect[found]);
      ++found;
    }
  }
  CHECK(found == 4);

  // dense sizes 64 then the class count
  bool saw_fc = false, saw_head = false;
  for (std::size_t i = 0; i < m.graph.node_count(); ++i) {
    const Node& n = m.graph.node(i);
    if (n.kind != OpKind::Dense) continue;
    if (n.out.numel() == 64) saw_fc = true;
    if (n.out.numel() == 2) saw_head = true;
  }
  CHECK(saw_fc);
  CHECK(saw_head);
}

TEST_CASE("char cnn desk-scale strides pass through the config") {
  ModelSpec spec = desk_spec(3);
  spec.max_chars = 16;
  spec.char_conv = {3, 2, 2, 2, 1, 2, 4};
  CHECK_NOTHROW(build_char_cnn(spec, 3));
}

TEST_CASE("char cnn rejects a collapsed intermediate length naming the layer") {
  ModelSpec spec = desk_spec(3);
  spec.max_chars = 32;
  spec.char_conv = {4, 4, 3, 4, 2, 3, 8};  // 32 -> 8 -> 3, then kernel 4 cannot fit
  CHECK_THROWS_WITH_AS(build_char_cnn(spec, 3), doctest::Contains("char.conv2"), Error);
}

TEST_CASE("hybrid cnn concatenates word and char channels") {
  ModelSpec spec = desk_spec(4);
  Vocabulary vocab = toy_vocab(9);
  BuiltModel m = build_hybrid_cnn(spec, toy_matrix(vocab, spec.embed_dim(), 2), 11);

  const std::size_t word_width = spec.windows.size() * spec.word_filters;
  // chars 24 -> conv(3,2) 11 -> pool2 6 -> conv(3,1) 4 -> pool2 2 -> flatten 12
  const std::size_t char_width = 2 * spec.char_filters;
  CHECK(m.graph.value(m.features).numel() == word_width + char_width);

  Rng rng(6);
  EncodedExample ex = toy_example(spec, rng, 9);
  m.bind(ex);
  m.bind_truth(0);
  m.graph.forward();
  m.store->zero_grads();
  m.graph.backward(m.loss);

  SUBCASE("both channels receive gradients") {
    const Tensor& char_f = m.store->param(m.store->id_of("char.conv1.filters"));
    const Tensor& word_f = m.store->param(m.store->id_of("conv.w2.filters"));
    auto magnitude = [](const Tensor& t) {
      double sum = 0.0;
      for (double g : t.grad()) sum += std::abs(g);
      return sum;
    };
    REQUIRE(char_f.has_grad());
    REQUIRE(word_f.has_grad());
    CHECK(magnitude(char_f) > 0.0);
    CHECK(magnitude(word_f) > 0.0);
  }

  SUBCASE("zeroing the char channel weights leaves a word-only function") {
    m.store->param(m.store->id_of("char.conv1.filters")).fill(0.0);
    m.store->param(m.store->id_of("char.conv1.bias")).fill(0.0);
    m.store->param(m.store->id_of("char.conv2.filters")).fill(0.0);
    m.store->param(m.store->id_of("char.conv2.bias")).fill(0.0);
    m.bind(ex);
    m.graph.forward_to(m.output);
    const std::vector<double> base = m.graph.value(m.output).values();

    EncodedExample other = ex;
    other.char_one_hot = char_one_hot_encode("completely different text", spec.max_chars);
    m.bind(other);
    m.graph.forward_to(m.output);
    CHECK(m.graph.value(m.output).values() == base);

    EncodedExample tokens_changed = ex;
    for (int& id : tokens_changed.token_ids) id = 2;
    m.bind(tokens_changed);
    m.graph.forward_to(m.output);
    CHECK(m.graph.value(m.output).values() != base);
  }
}

TEST_CASE("attention cnn exposes per-window weights") {
  ModelSpec spec = desk_spec(5);
  Vocabulary vocab = toy_vocab(7);
  BuiltModel m = build_attention_cnn(spec, toy_matrix(vocab, spec.embed_dim(), 4), 13);
  REQUIRE(m.attention_nodes.size() == spec.windows.size());

  Rng rng(8);
  EncodedExample ex = toy_example(spec, rng, 7);
  m.bind(ex);
  m.bind_truth(1);
  m.graph.forward();

  SUBCASE("alphas sum to one per window") {
    for (NodeId node : m.attention_nodes) {
      double sum = 0.0;
      for (double a : m.graph.attention_alphas(node)) sum += a;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("identical positions give uniform alphas") {
    EncodedExample uniform = ex;
    for (int& id : uniform.token_ids) id = 3;
    m.bind(uniform);
    m.graph.forward_to(m.output);
    for (NodeId node : m.attention_nodes) {
      const auto& alphas = m.graph.attention_alphas(node);
      for (double a : alphas) {
        CHECK(a == doctest::Approx(1.0 / static_cast<double>(alphas.size())).epsilon(1e-9));
      }
    }
  }

  SUBCASE("a distinct input has a dominant position") {
    const auto& alphas = m.graph.attention_alphas(m.attention_nodes[0]);
    double top = 0.0;
    for (double a : alphas) top = std::max(top, a);
    CHECK(top > 1.0 / static_cast<double>(alphas.size()));
  }
}

TEST_CASE("shared network merges label spaces") {
  ModelSpec spec = desk_spec(6);
  spec.tasks = {{"d1", 2}, {"d2", 2}, {"d3", 2}};
  Vocabulary vocab = toy_vocab(10);
  SharedNetwork sn = build_shared_network(spec, vocab, toy_matrix(vocab, 8, 5), 17);
  CHECK(sn.merged_classes == 6);
  CHECK(sn.class_offsets == std::vector<std::size_t>{0, 2, 4});
  CHECK(sn.merged_slot(2, 1) == 5);

  SUBCASE("task sets shaped like one hate and three sentiment tasks") {
    ModelSpec spec7 = desk_spec(7);
    spec7.tasks = {{"d1", 2}, {"s1", 3}, {"s2", 3}, {"s3", 2}};
    SharedNetwork sn7 = build_shared_network(spec7, vocab, toy_matrix(vocab, 8, 5), 23);
    CHECK(sn7.merged_classes == 10);
  }

  SUBCASE("duplicate task ids are rejected") {
    ModelSpec bad = desk_spec(6);
    bad.tasks = {{"d1", 2}, {"d1", 2}};
    CHECK_THROWS_WITH_AS(
        build_shared_network(bad, vocab, toy_matrix(vocab, 8, 5), 2),
        doctest::Contains("duplicate task"), Error);
  }
}

TEST_CASE("derived task heads freeze the backbone and share features") {
  ModelSpec spec = desk_spec(6);
  spec.tasks = {{"a", 2}, {"b", 3}};
  Vocabulary vocab = toy_vocab(10);
  SharedNetwork sn = build_shared_network(spec, vocab, toy_matrix(vocab, 8, 5), 17);

  BuiltModel head_a = derive_task_head(sn, "a", 2, 31);
  BuiltModel head_b = derive_task_head(sn, "b", 3, 32);
  CHECK(head_a.warnings.empty());

  for (const std::string& name : sn.backbone_params) {
    CHECK_FALSE(head_a.store->param(head_a.store->id_of(name)).trainable());
  }
  CHECK(head_a.store->param(head_a.store->id_of("head.w")).trainable());
  CHECK(head_a.graph.value(head_a.features).numel() == spec.pooled_width());

  Rng rng(3);
  EncodedExample ex = toy_example(spec, rng, 10);
  head_a.bind(ex);
  head_a.graph.forward_to(head_a.features);
  head_b.bind(ex);
  head_b.graph.forward_to(head_b.features);
  CHECK(head_a.graph.value(head_a.features).values() ==
        head_b.graph.value(head_b.features).values());

  SUBCASE("transfer to an unseen task is flagged") {
    BuiltModel foreign = derive_task_head(sn, "mystery", 2, 33);
    REQUIRE(foreign.warnings.size() == 1);
    CHECK(foreign.warnings[0].find("mystery") != std::string::npos);
  }

  SUBCASE("fine-tuning the head leaves the frozen hashes unchanged") {
    std::vector<std::uint64_t> before;
    for (const std::string& name : sn.backbone_params) {
      before.push_back(head_a.store->value_hash(head_a.store->id_of(name)));
    }
    head_a.bind(ex);
    head_a.bind_truth(1);
    head_a.graph.forward();
    head_a.store->zero_grads();
    head_a.graph.backward(head_a.loss);
    // nudge the trainable parameters by hand
    Tensor& w = head_a.store->param(head_a.store->id_of("head.w"));
    for (double& v : w.values()) v += 0.1;
    for (std::size_t i = 0; i < sn.backbone_params.size(); ++i) {
      CHECK(head_a.store->value_hash(head_a.store->id_of(sn.backbone_params[i])) ==
            before[i]);
    }
  }
}

TEST_CASE("concat model joins two frozen backbones") {
  Vocabulary vocab = toy_vocab(10);
  ModelSpec spec_a = desk_spec(6);
  spec_a.tasks = {{"a", 2}, {"b", 2}};
  ModelSpec spec_b = desk_spec(7);
  spec_b.tasks = {{"a", 2}, {"s", 3}};
  SharedNetwork sn_a = build_shared_network(spec_a, vocab, toy_matrix(vocab, 8, 5), 41);
  SharedNetwork sn_b = build_shared_network(spec_b, vocab, toy_matrix(vocab, 8, 6), 43);

  BuiltModel m = build_concat_model(sn_a, sn_b, 2, 47);
  CHECK(m.graph.value(m.features).numel() == 2 * spec_a.pooled_width());

  Rng rng(5);
  EncodedExample ex = toy_example(spec_a, rng, 10);
  m.bind(ex);
  m.bind_truth(0);
  m.graph.forward();
  m.store->zero_grads();
  m.graph.backward(m.loss);

  SUBCASE("only head parameters receive gradients") {
    for (std::size_t i = 0; i < m.store->size(); ++i) {
      const Tensor& p = m.store->param(static_cast<ParamId>(i));
      const std::string& name = m.store->name(static_cast<ParamId>(i));
      if (name.rfind("head.", 0) == 0) {
        CHECK(p.trainable());
      } else {
        CHECK_FALSE(p.trainable());
        CHECK_FALSE(p.has_grad());
      }
    }
  }

  SUBCASE("zeroing one feature half makes the head single-backbone") {
    Tensor& w = m.store->param(m.store->id_of("head.w"));
    const std::size_t half = spec_a.pooled_width();
    for (std::size_t o = 0; o < w.extent(0); ++o) {
      for (std::size_t c = half; c < w.extent(1); ++c) w.at(o, c) = 0.0;
    }
    m.bind(ex);
    m.graph.forward_to(m.output);
    const std::vector<double> base = m.graph.value(m.output).values();

    EncodedExample other = ex;
    for (int& id : other.token_ids_b) id = 2;  // only the zeroed half changes
    m.bind(other);
    m.graph.forward_to(m.output);
    CHECK(m.graph.value(m.output).values() == base);
  }
}

TEST_CASE("soft sharing starts as the independent subnets") {
  Vocabulary vocab = toy_vocab(12);
  ModelSpec spec = desk_spec(9);
  spec.tasks = {{"a", 2}, {"b", 3}};
  SoftSharedNetwork ssn = build_soft_shared(spec, vocab, toy_matrix(vocab, 8, 5), 53);
  CHECK(ssn.transform_count() == 2);

  Rng rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    EncodedExample ex = toy_example(spec, rng, 12);
    for (std::size_t t = 0; t < 2; ++t) {
      ssn.stl[t].bind(ex);
      ssn.stl[t].graph.forward_to(ssn.stl[t].output);
      ssn.share[t].bind(ex);
      ssn.share[t].graph.forward_to(ssn.share[t].output);
      const auto& a = ssn.stl[t].graph.value(ssn.stl[t].output).values();
      const auto& b = ssn.share[t].graph.value(ssn.share[t].output).values();
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
    }
  }

  SUBCASE("four tasks give twelve ordered transforms") {
    ModelSpec four = desk_spec(10);
    four.tasks = {{"d1", 2}, {"s1", 3}, {"s2", 3}, {"s3", 2}};
    SoftSharedNetwork big = build_soft_shared(four, vocab, toy_matrix(vocab, 8, 5), 59);
    CHECK(big.transform_count() == 4 * 3);
  }

  SUBCASE("a training step on one task reaches the lenders through the transforms") {
    EncodedExample ex = toy_example(spec, rng, 12);
    BuiltModel& task0 = ssn.share[0];
    // zero transforms block the lender path; give them small values first
    Tensor& w01 = ssn.store->param(ssn.store->id_of("xform.0.from.1.w"));
    for (std::size_t i = 0; i < w01.extent(0); ++i) w01.at(i, i) = 0.05;
    task0.bind(ex);
    task0.bind_truth(1);
    task0.graph.forward();
    ssn.store->zero_grads();
    task0.graph.backward(task0.loss);
    auto grad_mag = [&](const std::string& name) {
      const Tensor& p = ssn.store->param(ssn.store->id_of(name));
      if (!p.has_grad()) return 0.0;
      double sum = 0.0;
      for (double g : p.grad()) sum += std::abs(g);
      return sum;
    };
    CHECK(grad_mag("xform.0.from.1.w") > 0.0);      // borrowing transform learns
    CHECK(grad_mag("subnet.1.conv.w2.filters") > 0.0);  // lender subnet learns
    CHECK(grad_mag("subnet.0.conv.w2.filters") > 0.0);
    CHECK(grad_mag("subnet.1.head.w") == 0.0);  // the other head is untouched
  }
}

TEST_CASE("every variant's softmax output sums to one") {
  Vocabulary vocab = toy_vocab(10);
  Rng rng(71);
  ModelSpec spec = desk_spec(2);
  const Tensor matrix = toy_matrix(vocab, spec.embed_dim(), 77);

  auto check_model = [&](BuiltModel& m) {
    EncodedExample ex = toy_example(spec, rng, 10);
    m.bind(ex);
    m.graph.forward_to(m.output);
    double sum = 0.0;
    for (double v : m.graph.value(m.output).values()) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  };

  BuiltModel m1 = build_word_cnn(desk_spec(1), matrix, 1);
  check_model(m1);
  BuiltModel m2 = build_word_cnn(desk_spec(2), matrix, 2);
  check_model(m2);
  BuiltModel m3 = build_char_cnn(desk_spec(3), 3);
  check_model(m3);
  BuiltModel m4 = build_hybrid_cnn(desk_spec(4), matrix, 4);
  check_model(m4);
  BuiltModel m5 = build_attention_cnn(desk_spec(5), matrix, 5);
  check_model(m5);

  ModelSpec mtl = desk_spec(6);
  mtl.tasks = {{"a", 2}, {"b", 3}};
  SharedNetwork sn = build_shared_network(mtl, vocab, matrix, 6);
  check_model(sn.net);
  BuiltModel head = derive_task_head(sn, "a", 2, 7);
  check_model(head);
  SharedNetwork sn2 = build_shared_network(mtl, vocab, matrix, 8);
  BuiltModel cat = build_concat_model(sn, sn2, 2, 9);
  check_model(cat);
  SoftSharedNetwork ssn = build_soft_shared(mtl, vocab, matrix, 10);
  check_model(ssn.share[0]);
  check_model(ssn.stl[1]);
}

TEST_CASE("full attention model passes a gradient check") {
  ModelSpec spec = desk_spec(5);
  Vocabulary vocab = toy_vocab(9);
  BuiltModel m = build_attention_cnn(spec, toy_matrix(vocab, spec.embed_dim(), 3), 19);
  auto bind = [&](Rng& rng) {
    EncodedExample ex;
    ex.token_ids.resize(spec.max_tokens);
    for (int& id : ex.token_ids) id = 2 + static_cast<int>(rng.below(9));
    m.bind(ex);
    m.bind_truth(rng.below(2));
  };
  GradCheckOptions opts;
  opts.probes = 120;
  auto result = grad_check(m.graph, m.loss, bind, opts);
  INFO("worst ", result.worst.param, "[", result.worst.index, "]");
  CHECK(result.max_rel_error <= 1e-4);
}
