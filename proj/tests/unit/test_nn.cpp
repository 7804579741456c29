#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dkaf/core/error.hpp"
#include "dkaf/nn/blocks.hpp"
#include "support.hpp"

using namespace dkaf;
using namespace dkaf::nn;
using dkaf::testing::max_grad_error;
using dkaf::testing::project;

namespace {

constexpr double kGradTol = 1e-3;

Segments segs(std::vector<int> sizes) { return Segments::from_sizes(sizes); }

BlockConfig small_cfg() {
  BlockConfig c;
  c.emb = 8;
  c.hidden = 8;
  c.pos_dim = 4;
  c.pos_clip = 3;
  c.rgcn_layers = 2;
  c.hops = 2;
  c.scorer = 8;
  return c;
}

Ontology toy_ontology() {
  return Ontology({"restaurant", "cuisine", "rating"},
                  {{"cuisine", "restaurant", "cuisine", false}, {"rating", "restaurant", "rating", true}},
                  {{"thai", "cuisine"}, {"italian", "cuisine"}, {"1stars", "rating"}, {"3stars", "rating"},
                   {"na_thai", "restaurant"}, {"sala_thong", "restaurant"}});
}

Vocab toy_vocab() {
  Dialog d;
  d.id = "x";
  Utterance u;
  u.tokens = {"i", "want", "thai", "food"};
  d.utterances.push_back(u);
  return Vocab::build(toy_ontology(), {d});
}

}  // namespace

TEST_CASE("elementwise and matrix ops have matching gradients") {
  ParamStore ps;
  Rng rng(1);
  Param& a = ps.uniform("a", 4, 3, 1.0, rng);
  Param& b = ps.uniform("b", 4, 3, 1.0, rng);
  Param& w = ps.uniform("w", 5, 4, 1.0, rng);
  Param& bias = ps.uniform("bias", 5, 1, 1.0, rng);
  Param& pos = ps.uniform("pos", 4, 3, 1.0, rng);
  pos.value = pos.value.cwiseAbs().array() + 0.5;
  auto build = [&](Graph& g) {
    Var x = g.add(g.param(a), g.cmul(g.param(b), g.sigmoid(g.param(a))));
    x = g.sub(g.tanh(x), g.scale(g.exp(g.param(b)), 0.3));
    x = g.add(x, g.log(g.param(pos)));
    x = g.add(x, g.log_sigmoid(g.add_scalar(g.param(b), 0.2)));
    Var y = g.add_bias(g.matmul(g.param(w), x), g.param(bias));
    Var z = g.concat_rows({y, g.slice_rows(x, 1, 2)});
    z = g.concat_cols({z, g.slice_cols(z, 0, 1)});
    return g.add(project(g, z), g.mean(g.sum_rows(z)));
  };
  CHECK(max_grad_error(ps, build) < kGradTol);
}

TEST_CASE("relu gradient away from the kink") {
  ParamStore ps;
  Rng rng(2);
  Param& a = ps.uniform("a", 6, 5, 1.0, rng);
  for (int i = 0; i < a.value.size(); ++i)
    if (std::abs(a.value.data()[i]) < 0.05) a.value.data()[i] = 0.3;
  CHECK(max_grad_error(ps, [&](Graph& g) { return project(g, g.relu(g.param(a))); }) < kGradTol);
}

TEST_CASE("gather, pick and sparse products have matching gradients") {
  ParamStore ps;
  Rng rng(3);
  Param& a = ps.uniform("a", 3, 5, 1.0, rng);
  auto s = std::make_shared<SpMat>(5, 4);
  std::vector<Eigen::Triplet<double>> t{{0, 0, 1.0}, {2, 0, 2.0}, {4, 3, -1.0}, {1, 2, 0.5}};
  s->setFromTriplets(t.begin(), t.end());
  auto build = [&](Graph& g) {
    Var x = g.gather_cols(g.param(a), {4, 0, 0, 2});
    Var y = g.sparse_matmul(g.param(a), s);
    Var p = g.pick_many(g.param(a), {0, 1, 2, 0}, {1, 1, 3, 1});
    return g.add(g.add(project(g, x), project(g, y, 7)), g.add(g.sum(p), g.pick(g.param(a), 2, 4)));
  };
  CHECK(max_grad_error(ps, build) < kGradTol);
}

TEST_CASE("segment ops have matching gradients") {
  ParamStore ps;
  Rng rng(4);
  Param& s = ps.uniform("s", 1, 7, 2.0, rng);
  Param& x = ps.uniform("x", 3, 7, 1.0, rng);
  Param& q = ps.uniform("q", 3, 3, 1.0, rng);
  Segments seg = segs({2, 4, 1});
  auto build = [&](Graph& g) {
    Var sm = g.segment_softmax(g.param(s), seg);
    Var ls = g.segment_log_softmax(g.param(s), seg);
    Var lse = g.segment_logsumexp(g.param(s), seg);
    Var ws = g.segment_wsum(g.param(x), sm, seg);
    Var sb = g.add_seg_broadcast(g.param(x), g.param(q), seg);
    Var out = g.add(project(g, ws), project(g, ls, 8));
    out = g.add(out, g.add(project(g, lse, 9), project(g, sb, 10)));
    out = g.add(out, project(g, g.segment_sum(g.param(x), seg), 11));
    return g.add(out, project(g, g.segment_mean(g.param(x), seg), 12));
  };
  CHECK(max_grad_error(ps, build) < kGradTol);
}

TEST_CASE("column log-softmax and logistic loss have matching gradients") {
  ParamStore ps;
  Rng rng(5);
  Param& a = ps.uniform("a", 5, 4, 2.0, rng);
  Mat targets(5, 4);
  for (int i = 0; i < targets.size(); ++i) targets.data()[i] = i % 3 == 0 ? 1.0 : 0.0;
  auto build = [&](Graph& g) {
    return g.add(project(g, g.col_log_softmax(g.param(a))), g.bce_with_logits(g.param(a), targets));
  };
  CHECK(max_grad_error(ps, build) < kGradTol);
}

TEST_CASE("gru forward and reverse have matching gradients") {
  ParamStore ps;
  Rng rng(6);
  Param& x = ps.uniform("x", 4, 7, 1.0, rng);
  GruParams p{&ps.dense("w_ih", 9, 4, rng), &ps.dense("w_hh", 9, 3, rng), &ps.uniform("b_ih", 9, 1, 0.2, rng),
              &ps.uniform("b_hh", 9, 1, 0.2, rng)};
  Segments seg = segs({3, 1, 3});
  for (bool reverse : {false, true}) {
    auto build = [&](Graph& g) { return project(g, g.gru(g.param(x), seg, p, reverse)); };
    CHECK(max_grad_error(ps, build) < kGradTol);
  }
}

TEST_CASE("gru matches a hand-unrolled recurrence") {
  ParamStore ps;
  Rng rng(7);
  Param& x = ps.uniform("x", 2, 3, 1.0, rng);
  GruParams p{&ps.dense("w_ih", 6, 2, rng), &ps.dense("w_hh", 6, 2, rng), &ps.uniform("b_ih", 6, 1, 0.2, rng),
              &ps.uniform("b_hh", 6, 1, 0.2, rng)};
  Graph g;
  Mat out = g.value(g.gru(g.param(x), segs({3}), p, false));
  auto sig = [](const Mat& m) { return Mat((1.0 + (-m.array()).exp()).inverse()); };
  Mat h = Mat::Zero(2, 1);
  for (int t = 0; t < 3; ++t) {
    Mat gi = p.w_ih->value * x.value.col(t) + p.b_ih->value;
    Mat gh = p.w_hh->value * h + p.b_hh->value;
    Mat r = sig(gi.topRows(2) + gh.topRows(2));
    Mat z = sig(gi.middleRows(2, 2) + gh.middleRows(2, 2));
    Mat n = (gi.bottomRows(2).array() + r.array() * gh.bottomRows(2).array()).tanh().matrix();
    h = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
    CHECK((out.col(t) - h).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("empty segment logsumexp is negative infinity") {
  Graph g;
  Var v = g.constant(Mat::Ones(1, 2));
  Mat r = g.value(g.segment_logsumexp(v, segs({2, 0})));
  CHECK(std::isinf(r(0, 1)));
  CHECK(r(0, 1) < 0);
}

TEST_CASE("r-GCN layer matches naive message passing on random graphs") {
  Vocab vocab = toy_vocab();
  BlockConfig cfg = small_cfg();
  cfg.rgcn_layers = 1;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    ParamStore ps;
    KBEncoder enc(ps, "kb", vocab, 2, cfg, rng);
    Mat z0(cfg.emb, 5);
    for (int i = 0; i < z0.size(); ++i) z0.data()[i] = rng.uniform(-1.0, 1.0);
    std::vector<std::tuple<int, int, int>> edges;
    for (int h = 0; h < 5; ++h)
      for (int t = 0; t < 5; ++t)
        for (int r = 0; r < 2; ++r)
          if (h != t && rng.bernoulli(0.25)) edges.emplace_back(h, r, t);
    Graph g;
    Mat fast = g.value(enc.layer(g, g.constant(z0), 0, edges));

    Mat naive(cfg.emb, 5);
    for (int e = 0; e < 5; ++e) {
      Vec acc = enc.self_weight(0)->value * z0.col(e);
      for (const auto& [h, r, t] : edges) {
        if (t == e) acc += enc.relation_weight(0, r)->value * z0.col(h);
        if (h == e) acc += enc.relation_weight(0, 2 + r)->value * z0.col(t);
      }
      naive.col(e) = acc.cwiseMax(0.0);
    }
    worst = std::max(worst, (fast - naive).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("r-GCN without edges reduces to the self map") {
  Vocab vocab = toy_vocab();
  Rng rng(8);
  ParamStore ps;
  KBEncoder enc(ps, "kb", vocab, 2, small_cfg(), rng);
  Mat z0 = Mat::Random(8, 3);
  Graph g;
  Mat out = g.value(enc.layer(g, g.constant(z0), 1, {}));
  CHECK((out - (enc.self_weight(1)->value * z0).cwiseMax(0.0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("KB encoder gradients and one vector per entity") {
  Ontology onto = toy_ontology();
  Vocab vocab = toy_vocab();
  Rng rng(9);
  ParamStore ps;
  KBEncoder enc(ps, "kb", vocab, 2, small_cfg(), rng);
  KnowledgeBase kb("k");
  kb.insert({{"na_thai", "restaurant"}, {{"cuisine", {"thai", "cuisine"}}, {"rating", {"1stars", "rating"}}}});
  kb.insert({{"sala_thong", "restaurant"}, {{"cuisine", {"thai", "cuisine"}}, {"rating", {"3stars", "rating"}}}});
  KBGraphInput in = kb_graph(kb, onto, vocab, recency_tags({{"thai", "cuisine"}, {"sala_thong", "restaurant"}}));
  {
    Graph g;
    KBEncoding e = enc.encode(g, {in, in});
    CHECK(g.value(e.z).cols() == 2 * static_cast<int>(kb.entities().size()));
    CHECK(g.value(e.z).rows() == 8);
  }
  CHECK(max_grad_error(ps, [&](Graph& g) { return project(g, enc.encode(g, {in}).z); }) < kGradTol);
}

TEST_CASE("KB value without embedding is rejected") {
  Ontology onto = toy_ontology();
  Vocab vocab;
  KnowledgeBase kb("k");
  kb.insert({{"na_thai", "restaurant"}, {{"cuisine", {"thai", "cuisine"}}}});
  CHECK_THROWS_AS(kb_graph(kb, onto, vocab), dkaf::InvalidInput);
}

TEST_CASE("recency tags mark the latest mention of each type") {
  auto t = recency_tags({{"a", "x"}, {"b", "y"}, {"c", "x"}});
  CHECK(t.at("a") == 1);
  CHECK(t.at("b") == 2);
  CHECK(t.at("c") == 2);
}

TEST_CASE("memory read matches a hand-unrolled two-hop recurrence") {
  Rng rng(10);
  ParamStore ps;
  MemoryNetwork mem(ps, "m", 4, 2, 5, rng);
  for (const auto& p : ps.all())
    for (int i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-0.5, 0.5);
  Mat z = Mat::Random(4, 3);
  Mat q0 = Mat::Random(4, 1);
  Graph g;
  MemoryRead r = mem.read(g, g.constant(q0), g.constant(z), {{0, 1, 2}});
  Mat q = q0;
  for (int l = 0; l < 2; ++l) {
    auto pre = "m.hop" + std::to_string(l);
    const Mat& wz = ps.get(pre + ".wz").value;
    const Mat& wq = ps.get(pre + ".wq").value;
    const Mat& b = ps.get(pre + ".b").value;
    const Mat& v = ps.get(pre + ".v").value;
    Vec s(3);
    for (int k = 0; k < 3; ++k) s(k) = (v * (wz * z.col(k) + wq * q + b).array().tanh().matrix())(0, 0);
    Vec gamma = (s.array() - s.maxCoeff()).exp();
    gamma /= gamma.sum();
    CHECK((g.value(r.gamma[l]).transpose() - gamma).cwiseAbs().maxCoeff() < 1e-6);
    q = q + z * gamma;
  }
  CHECK((g.value(r.q) - q).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("memory with a single slot adds it once per hop") {
  Rng rng(11);
  ParamStore ps;
  MemoryNetwork mem(ps, "m", 4, 3, 5, rng);
  Mat z = Mat::Random(4, 1);
  Mat q0 = Mat::Random(4, 1);
  Graph g;
  MemoryRead r = mem.read(g, g.constant(q0), g.constant(z), {{0}});
  CHECK((g.value(r.q) - (q0 + 3 * z)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(mem.read(g, g.constant(q0), g.constant(z), {{}}), dkaf::InvalidInput);
}

TEST_CASE("memory read gradients, batched over instances") {
  Rng rng(12);
  ParamStore ps;
  MemoryNetwork mem(ps, "m", 6, 2, 5, rng);
  Param& z = ps.uniform("z", 6, 5, 1.0, rng);
  Param& q = ps.uniform("q", 6, 2, 1.0, rng);
  auto build = [&](Graph& g) {
    MemoryRead r = mem.read(g, g.param(q), g.param(z), {{0, 2, 4}, {1, 3}});
    return project(g, r.q);
  };
  CHECK(max_grad_error(ps, build) < kGradTol);
}

namespace {

DialogInput random_dialog(Rng& rng, const Vocab& vocab, int utts) {
  DialogInput in;
  for (int u = 0; u < utts; ++u) {
    int len = 1 + static_cast<int>(rng.index(4));
    std::vector<int> tok, tag;
    for (int k = 0; k < len; ++k) {
      tok.push_back(static_cast<int>(rng.index(vocab.size())));
      tag.push_back(static_cast<int>(rng.index(vocab.tag_count())));
    }
    in.tokens.push_back(tok);
    in.tags.push_back(tag);
  }
  return in;
}

}  // namespace

TEST_CASE("dialog encoder attention sums to one and widths are fixed") {
  Vocab vocab = toy_vocab();
  Rng rng(13);
  ParamStore ps;
  BlockConfig cfg = small_cfg();
  DialogEncoder enc(ps, "d", vocab, cfg, rng);
  std::vector<DialogInput> batch{random_dialog(rng, vocab, 3), random_dialog(rng, vocab, 5)};
  batch[1].positions = enc.positions(5, {2});
  Graph g;
  DialogEncoding e = enc.encode(g, batch);
  CHECK(g.value(e.c).rows() == cfg.hidden);
  CHECK(g.value(e.c).cols() == 2);
  Mat beta = g.value(e.beta);
  CHECK(std::abs(beta.leftCols(3).sum() - 1.0) < 1e-6);
  CHECK(std::abs(beta.rightCols(5).sum() - 1.0) < 1e-6);
  Mat alpha = g.value(e.alpha);
  int distinct = static_cast<int>(e.utt_token_start.size());
  for (int u = 0; u < distinct; ++u) {
    int end = u + 1 < distinct ? e.utt_token_start[u + 1] : static_cast<int>(alpha.cols());
    CHECK(std::abs(alpha.middleCols(e.utt_token_start[u], end - e.utt_token_start[u]).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("single-utterance dialog pools to its dialog state") {
  Vocab vocab = toy_vocab();
  Rng rng(14);
  ParamStore ps;
  DialogEncoder enc(ps, "d", vocab, small_cfg(), rng);
  Graph g;
  DialogEncoding e = enc.encode(g, {random_dialog(rng, vocab, 1)});
  CHECK(std::abs(g.value(e.beta)(0, 0) - 1.0) < 1e-12);
  CHECK((g.value(e.c) - g.value(e.states)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("equal attention logits pool to the arithmetic mean") {
  Vocab vocab = toy_vocab();
  Rng rng(15);
  ParamStore ps;
  DialogEncoder enc(ps, "d", vocab, small_cfg(), rng);
  enc.utt_attn.v->value.setZero();
  enc.dlg_attn.v->value.setZero();
  Graph g;
  DialogEncoding e = enc.encode(g, {random_dialog(rng, vocab, 4)});
  Mat states = g.value(e.states);
  CHECK((g.value(e.c) - states.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
  Mat tokens = g.value(e.tokens);
  int end = e.utt_token_start.size() > 1 ? e.utt_token_start[1] : static_cast<int>(tokens.cols());
  CHECK((g.value(e.utts).col(0) - tokens.leftCols(end).rowwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dialog encoder gradients") {
  Vocab vocab = toy_vocab();
  Rng rng(16);
  ParamStore ps;
  DialogEncoder enc(ps, "d", vocab, small_cfg(), rng);
  std::vector<DialogInput> batch{random_dialog(rng, vocab, 3), random_dialog(rng, vocab, 2)};
  batch[0].positions = enc.positions(3, {0, 2});
  CHECK(max_grad_error(ps, [&](Graph& g) { return project(g, enc.encode(g, batch).c); }, 6) < kGradTol);
  CHECK_THROWS_AS(
      [&] {
        Graph g;
        enc.encode(g, {DialogInput{}});
      }(),
      dkaf::InvalidInput);
}

TEST_CASE("position vectors use the clipped distance to the nearest mark") {
  Vocab vocab = toy_vocab();
  Rng rng(17);
  ParamStore ps;
  BlockConfig cfg = small_cfg();  // clip 3
  DialogEncoder enc(ps, "d", vocab, cfg, rng);
  auto p = enc.positions(9, {1, 5});
  // distances: -1 0 1 2|-2 ... ties go to the earlier mark
  std::vector<int> expect{-1, 0, 1, 2, -1, 0, 1, 2, 3};
  for (int i = 0; i < 9; ++i) CHECK(p[i] == expect[i] + 3);
  auto none = enc.positions(2, {});
  CHECK(none[0] == enc.absent_position());
}

TEST_CASE("scorer, linear and featurizer gradients") {
  Vocab vocab = toy_vocab();
  Rng rng(18);
  ParamStore ps;
  Scorer s(ps, "s", 5, 6, rng);
  Linear lin(ps, "l", 5, 3, rng);
  TokenFeaturizer f(ps, "f", vocab, 5, rng);
  auto build = [&](Graph& g) {
    Var x = f(g, {1, 4, 4, 9}, {0, 1, 2, 0});
    return g.add(project(g, s(g, x)), project(g, lin(g, x), 3));
  };
  CHECK(max_grad_error(ps, build) < kGradTol);
}

TEST_CASE("same seed gives identical parameters and forward values") {
  Vocab vocab = toy_vocab();
  auto run = [&] {
    Rng rng(21);
    ParamStore ps;
    DialogEncoder enc(ps, "d", vocab, small_cfg(), rng);
    Rng data(3);
    Graph g;
    Mat c = g.value(enc.encode(g, {random_dialog(data, vocab, 3)}).c);
    return std::make_pair(ps.serialize(), c);
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("parameter blobs round-trip through disk") {
  Rng rng(22);
  ParamStore ps;
  ps.uniform("a", 3, 4, 1.0, rng);
  ps.dense("b", 2, 2, rng);
  auto path = std::filesystem::temp_directory_path() / "dkaf_params_test.bin";
  ps.save(path.string());
  ParamStore other;
  other.zeros("a", 3, 4);
  other.zeros("b", 2, 2);
  other.load(path.string());
  CHECK(other.serialize() == ps.serialize());
  std::filesystem::remove(path);
}

TEST_CASE("adam reduces a quadratic and rejects non-finite gradients") {
  ParamStore ps;
  Param& x = ps.add("x", Mat::Constant(2, 1, 3.0));
  Adam opt(ps, AdamConfig{.lr = 0.1});
  for (int i = 0; i < 200; ++i) {
    Graph g;
    Var v = g.param(x);
    g.backward(g.sum(g.cmul(v, v)));
    opt.step();
  }
  CHECK(x.value.norm() < 0.1);
  x.grad(0, 0) = std::nan("");
  CHECK_THROWS_AS(opt.step(), dkaf::Divergence);
}
