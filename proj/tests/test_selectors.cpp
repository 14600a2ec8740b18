#include <gtest/gtest.h>

#include <algorithm>
#include <mutex>

#include <fmt/format.h>

#include "llmfs/error.hpp"
#include "llmfs/llm_selectors.hpp"
#include "llmfs/log.hpp"
#include "llmfs/random.hpp"

using namespace llmfs;

namespace {

struct WarningCapture {
  std::vector<std::string> seen;
  WarningSink old;
  WarningCapture() : old(set_warning_sink([this](std::string_view w) { seen.emplace_back(w); })) {}
  ~WarningCapture() { set_warning_sink(old); }
};

TaskSpec diabetes() {
  TaskSpec t;
  t.target_description = "whether a patient has diabetes";
  return t;
}

bool contains(const std::string& s, std::string_view part) {
  return s.find(part) != std::string::npos;
}

/// Records every request and answers through `reply`.
class Recorder {
 public:
  explicit Recorder(std::function<std::string(const ChatRequest&)> reply)
      : backend_([this, reply](const ChatRequest& r) -> std::optional<std::string> {
          std::lock_guard lock(mu_);
          seen_.push_back(r);
          return reply(r);
        }) {}

  ScriptedBackend& backend() { return backend_; }
  std::vector<ChatRequest> seen() {
    std::lock_guard lock(mu_);
    return seen_;
  }

 private:
  std::mutex mu_;
  std::vector<ChatRequest> seen_;
  ScriptedBackend backend_;
};

const std::vector<std::string> kAbc = {"a", "b", "c"};

// Concepts Glucose, BMI, Age, Ethnicity; Ethnicity spans three one-hot columns.
PreparedDataset toy_prepared() {
  PreparedDataset p;
  p.task = TaskKind::classification;
  p.concepts = {"Glucose", "BMI", "Age", "Ethnicity"};
  p.groups = {{0}, {1}, {2}, {3, 4, 5}};
  p.column_concept = {0, 1, 2, 3, 3, 3};
  p.column_names = {"Glucose", "BMI", "Age", "Ethnicity=a", "Ethnicity=b", "Ethnicity=c"};
  const int n = 160;
  Rng rng(5);
  p.X.resize(n, 6);
  p.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) p.X(i, j) = rng.normal();
    const auto cat = rng.uniform_index(3);
    for (int j = 0; j < 3; ++j) p.X(i, 3 + j) = (static_cast<std::size_t>(j) == cat) ? 1.0 : 0.0;
    p.y(i) = (1.5 * p.X(i, 0) + 0.5 * p.X(i, 1) + 0.8 * rng.normal() > 0) ? 1.0 : 0.0;
  }
  p.stats.assign(6, std::nullopt);
  return p;
}

}  // namespace

TEST(LlmScore, AveragesSamples) {
  ScriptedBackend backend;
  const auto user = build_score_prompt(diabetes(), "Glucose", PromptVariant::default_prompt).user;
  backend.add(std::nullopt, user, {R"({"score":0.6})", R"({"score":0.7})", R"({"score":0.8})"});
  ChatClient client(backend);
  DecodingConfig three = DecodingConfig::self_consistency(3);
  const std::vector<std::string> concepts = {"Glucose"};
  const auto iv = llm_score(client, "m", diabetes(), concepts, PromptVariant::default_prompt, three);
  EXPECT_NEAR(iv.scores[0], 0.7, 1e-15);
  EXPECT_EQ(iv.n_samples_used[0], 3);
  EXPECT_EQ(backend.calls(), 3u);
}

TEST(LlmScore, DecodingTemperatures) {
  Recorder rec([](const ChatRequest&) { return std::string(R"({"reasoning":"r","score":0.5})"); });
  ChatClient client(rec.backend());
  llm_score(client, "m", diabetes(), kAbc, PromptVariant::default_prompt, DecodingConfig::greedy());
  auto seen = rec.seen();
  ASSERT_EQ(seen.size(), 3u);
  for (const auto& r : seen) EXPECT_EQ(r.temperature, 0.0);

  Recorder sc([](const ChatRequest&) { return std::string(R"({"score":0.5})"); });
  ChatClient sc_client(sc.backend());
  const auto iv = llm_score(sc_client, "m", diabetes(), kAbc, PromptVariant::default_prompt,
                            DecodingConfig::self_consistency());
  seen = sc.seen();
  ASSERT_EQ(seen.size(), 15u);
  for (const auto& r : seen) EXPECT_EQ(r.temperature, 0.5);
  for (int n : iv.n_samples_used) EXPECT_EQ(n, 5);
  // Samples of one concept carry distinct indices.
  std::vector<int> idx;
  for (const auto& r : seen)
    if (contains(r.messages.back().content, "\"a\"")) idx.push_back(r.sample_index);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(LlmScore, DropsBadSamplesAndFailsWhenNoneParse) {
  Recorder rec([](const ChatRequest& r) {
    return r.sample_index == 1 ? std::string("no idea") : std::string(R"({"score":0.4})");
  });
  ChatClient client(rec.backend());
  WarningCapture w;
  const auto iv = llm_score(client, "m", diabetes(), kAbc, PromptVariant::default_prompt,
                            DecodingConfig::self_consistency(3));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(iv.n_samples_used[c], 2);
    EXPECT_DOUBLE_EQ(iv.scores[c], 0.4);
  }
  EXPECT_EQ(w.seen.size(), 3u);

  Recorder bad([](const ChatRequest& r) {
    return contains(r.messages.back().content, "\"b\"") ? std::string("{\"score\": 7}")
                                                        : std::string(R"({"score":0.4})");
  });
  ChatClient bad_client(bad.backend());
  EXPECT_THROW(llm_score(bad_client, "m", diabetes(), kAbc, PromptVariant::default_prompt,
                         DecodingConfig::greedy()),
               ParseError);
  EXPECT_THROW(llm_score(bad_client, "m", diabetes(), std::vector<std::string>{},
                         PromptVariant::default_prompt, DecodingConfig::greedy()),
               Error);
}

TEST(LlmScore, ScoresStayInRange) {
  TaskSpec t = diabetes();
  t.min_score = 8;
  t.max_score = 24;
  Recorder rec([](const ChatRequest& r) {
    return fmt::format(R"({{"score": {}}})", 8 + (r.messages.back().content.size() % 17));
  });
  ChatClient client(rec.backend());
  const auto iv = llm_score(client, "m", t, kAbc, PromptVariant::default_prompt,
                            DecodingConfig::self_consistency(4));
  for (double s : iv.scores) {
    EXPECT_GE(s, 8.0);
    EXPECT_LE(s, 24.0);
  }
}

TEST(LlmRank, SingleAndMeanOfSamples) {
  const auto user = build_rank_prompt(diabetes(), kAbc).user;
  ScriptedBackend one;
  one.add(std::nullopt, user, {"1. c\n2. a\n3. b"});
  ChatClient c1(one);
  const auto r = llm_rank(c1, "m", diabetes(), kAbc, DecodingConfig::greedy());
  EXPECT_EQ(r.order, (std::vector<std::size_t>{2, 0, 1}));
  EXPECT_EQ(r.source, RankingSource::llm_rank);

  // Mean positions a=1.5, b=1.5, c=3; the tie goes to a.
  ScriptedBackend two;
  two.add(std::nullopt, user, {"1. a\n2. b\n3. c", "1. b\n2. a\n3. c"});
  ChatClient c2(two);
  EXPECT_EQ(llm_rank(c2, "m", diabetes(), kAbc, DecodingConfig::self_consistency(2)).order,
            (std::vector<std::size_t>{0, 1, 2}));

  EXPECT_THROW(llm_rank(c2, "m", diabetes(), std::vector<std::string>{"a"}, DecodingConfig::greedy()),
               Error);
}

TEST(LlmRank, UnparseableEverywhereIsAnError) {
  Recorder rec([](const ChatRequest&) { return std::string("I cannot rank these."); });
  ChatClient client(rec.backend());
  WarningCapture w;
  EXPECT_THROW(llm_rank(client, "m", diabetes(), kAbc, DecodingConfig::self_consistency(2)),
               ParseError);
}

TEST(LlmRank, RequeryFillsOmissions) {
  const std::vector<std::string> concepts = {"a", "b", "c", "d"};
  Recorder rec([](const ChatRequest& r) {
    if (r.messages.size() > 2) return std::string("1. d\n2. c\n3. b\n4. a");
    return std::string("1. d\n2. b");
  });
  ChatClient client(rec.backend());
  WarningCapture w;
  const auto plain = llm_rank(client, "m", diabetes(), concepts, DecodingConfig::greedy());
  EXPECT_EQ(plain.order, (std::vector<std::size_t>{3, 1, 0, 2}));
  EXPECT_EQ(rec.seen().size(), 1u);

  const auto fixed = llm_rank(client, "m", diabetes(), concepts, DecodingConfig::greedy(), {.requery_missing = 2});
  EXPECT_EQ(fixed.order, (std::vector<std::size_t>{3, 2, 1, 0}));
  const auto seen = rec.seen();
  ASSERT_EQ(seen.size(), 3u);  // the complete answer stops further re-queries
  EXPECT_TRUE(contains(seen.back().messages.back().content, "left out: \"a, c\""));
  EXPECT_THROW(llm_rank(client, "m", diabetes(), concepts, DecodingConfig::greedy(), {.requery_missing = 3}),
               Error);
}

TEST(SelectTopFraction, SizesTiesAndGroups) {
  std::vector<std::vector<std::size_t>> groups20(20);
  for (std::size_t i = 0; i < 20; ++i) groups20[i] = {i};
  Ranking identity;
  for (std::size_t i = 0; i < 20; ++i) identity.order.push_back(i);
  EXPECT_EQ(select_top_fraction(identity, groups20, 0.1).selected_concepts.size(), 2u);

  ImportanceVector iv{kAbc, {0.9, 0.9, 0.1}, {1, 1, 1}, {{}, {}, {}}};
  const std::vector<std::vector<std::size_t>> g3 = {{0}, {1}, {2}};
  const auto sel = select_top_fraction(iv, g3, 2.0 / 3.0);
  EXPECT_EQ(sel.selected_concepts, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(sel.method, "llm_score");

  const auto p = toy_prepared();
  Ranking eth{{3, 0, 1, 2}, RankingSource::llm_rank};
  const auto one = select_top_fraction(eth, p.groups, 0.25);
  EXPECT_EQ(one.selected_columns, (std::vector<std::size_t>{3, 4, 5}));
  EXPECT_EQ(select_top_fraction(eth, p.groups, 0.5).selected_columns,
            (std::vector<std::size_t>{0, 3, 4, 5}));
  // Eight concepts at 10% still keep one.
  std::vector<std::vector<std::size_t>> g8(8);
  for (std::size_t i = 0; i < 8; ++i) g8[i] = {i};
  EXPECT_EQ(random_select(g8, 0.1, 4).selected_concepts.size(), 1u);
  EXPECT_THROW(select_top_fraction(eth, p.groups, 0.0), Error);
  EXPECT_THROW(select_top_fraction(Ranking{{0, 0, 1, 2}, RankingSource::llm_rank}, p.groups, 0.5), Error);
}

TEST(SelectTopFraction, NestedAcrossFractions) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t D = 2 + rng.uniform_index(25);
    std::vector<std::vector<std::size_t>> groups(D);
    std::size_t col = 0;
    for (auto& g : groups)
      for (std::size_t j = 0, m = 1 + rng.uniform_index(3); j < m; ++j) g.push_back(col++);
    ImportanceVector iv;
    for (std::size_t i = 0; i < D; ++i) {
      iv.concepts.push_back(fmt::format("c{}", i));
      iv.scores.push_back(static_cast<double>(rng.uniform_index(5)) / 4.0);  // plenty of ties
      iv.n_samples_used.push_back(1);
      iv.reasonings.emplace_back();
    }
    const auto ranking = ranking_from_scores(iv);
    const auto fractions = default_fractions();
    std::vector<std::size_t> prev_s, prev_r, prev_rand;
    for (double f : fractions) {
      for (auto* pair : {&prev_s, &prev_r, &prev_rand}) {
        SelectionResult cur = pair == &prev_s   ? select_top_fraction(iv, groups, f)
                              : pair == &prev_r ? select_top_fraction(ranking, groups, f)
                                                : random_select(groups, f, 9);
        auto sorted = cur.selected_concepts;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_TRUE(std::includes(sorted.begin(), sorted.end(), pair->begin(), pair->end()));
        EXPECT_EQ(cur.selected_columns, expand_columns(cur.selected_concepts, groups));
        EXPECT_GE(cur.selected_concepts.size(), 1u);
        EXPECT_LE(cur.selected_concepts.size(), D);
        *pair = sorted;
      }
    }
  }
}

TEST(SelectTopFraction, AffineRescalingKeepsSelection) {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t D = 3 + rng.uniform_index(15);
    std::vector<std::vector<std::size_t>> groups(D);
    for (std::size_t i = 0; i < D; ++i) groups[i] = {i};
    ImportanceVector iv;
    for (std::size_t i = 0; i < D; ++i) {
      iv.concepts.push_back(fmt::format("c{}", i));
      // Values on a coarse grid so the affine map keeps ties exact.
      iv.scores.push_back(static_cast<double>(rng.uniform_index(11)) / 10.0);
    }
    iv.n_samples_used.assign(D, 1);
    iv.reasonings.assign(D, {});
    ImportanceVector scaled = iv;
    for (auto& s : scaled.scores) s = 16.0 * s + 8.0;
    for (double f : default_fractions())
      EXPECT_EQ(select_top_fraction(iv, groups, f).selected_concepts,
                select_top_fraction(scaled, groups, f).selected_concepts);
  }
}

TEST(LlmSeq, ScriptedDialogue) {
  const auto p = toy_prepared();
  const auto sp = split(p, SplitSpec{});
  const Trainer trainer(TaskKind::classification);
  Recorder rec([](const ChatRequest& r) {
    return contains(r.messages.back().content, "[]") ? std::string("Glucose") : std::string("BMI.");
  });
  ChatClient client(rec.backend());
  SeqOptions opt;
  opt.k = 2;
  const auto r = llm_seq(client, "m", diabetes(), p, sp, trainer, opt);
  EXPECT_EQ(r.order, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(r.source, RankingSource::llm_seq);
  const auto seen = rec.seen();
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_TRUE(contains(seen[0].messages.back().content, "test AUROC of N/A"));
  EXPECT_EQ(seen[0].temperature, 0.0);

  // The second turn reports the CV AUROC of the first pick and drops it from the candidates.
  const Eigen::MatrixXd Xtr = take_rows(p.X, sp.train);
  const Eigen::VectorXd ytr = take_rows(p.y, sp.train);
  const std::vector<std::size_t> first = {0};
  const double auroc = trainer.tune(take_columns(Xtr, first), ytr, sp.folds).best_metric;
  const auto& second = seen[1].messages;
  EXPECT_TRUE(contains(second.back().content,
                       fmt::format("[Glucose], and the trained model achieved a test AUROC of {:.4f}. "
                                   "What feature should I add next from: BMI, Age, Ethnicity?",
                                   auroc)));
  ASSERT_EQ(second.size(), 4u);  // system, prior user, prior assistant, user
  EXPECT_EQ(second[2].content, "Glucose");
}

TEST(LlmSeq, RepeatedPickIsRequeriedThenFallsBack) {
  const auto p = toy_prepared();
  const auto sp = split(p, SplitSpec{});
  const Trainer trainer(TaskKind::classification);
  // Always answers Age, so turn 2 needs a re-query and then the fallback.
  Recorder rec([](const ChatRequest&) { return std::string("Age"); });
  ChatClient client(rec.backend());
  WarningCapture w;
  SeqOptions opt;
  opt.k = 3;
  const auto r = llm_seq(client, "m", diabetes(), p, sp, trainer, opt);
  EXPECT_EQ(r.order, (std::vector<std::size_t>{2, 0, 1, 3}));
  const auto seen = rec.seen();
  EXPECT_EQ(seen.size(), 5u);  // k turns plus one re-query each for turns 2 and 3
  EXPECT_TRUE(contains(seen[2].messages.back().content, "\"Age\" has already been selected."));
  EXPECT_EQ(w.seen.size(), 2u);
  // No prompt offers a concept that is already selected.
  for (const auto& req : seen) {
    const auto& u = req.messages.back().content;
    const auto from = u.find("from: ");
    if (from == std::string::npos || !contains(u, "[Age")) continue;
    EXPECT_FALSE(contains(u.substr(from), "Age")) << u;
  }
}

TEST(LlmSeq, UnknownNameRequeriedOnce) {
  const auto p = toy_prepared();
  const auto sp = split(p, SplitSpec{});
  Recorder rec([](const ChatRequest& r) {
    return r.messages.size() > 2 ? std::string("BMI") : std::string("Shoe size");
  });
  ChatClient client(rec.backend());
  SeqOptions opt;
  const auto r = llm_seq(client, "m", diabetes(), p, sp, Trainer(TaskKind::classification), opt);
  EXPECT_EQ(r.order.front(), 1u);
  EXPECT_EQ(rec.seen().size(), 2u);
}

TEST(LlmSeq, TopScoreInitAndBuffer) {
  const auto p = toy_prepared();
  const auto sp = split(p, SplitSpec{});
  ImportanceVector iv{p.concepts, {0.2, 0.3, 0.9, 0.1}, {1, 1, 1, 1}, {{}, {}, {}, {}}};
  Recorder rec([](const ChatRequest& r) {
    const auto& u = r.messages.back().content;
    const auto from = u.find("from: ") + 6;
    return u.substr(from, u.find_first_of(",?", from) - from);
  });
  ChatClient client(rec.backend());
  SeqOptions opt;
  opt.k = 4;
  opt.init = SeqInit::top_llm_score;
  opt.init_scores = &iv;
  opt.buffer_size = 1;
  const auto r = llm_seq(client, "m", diabetes(), p, sp, Trainer(TaskKind::classification), opt);
  EXPECT_EQ(r.order.front(), 2u);
  const auto seen = rec.seen();
  ASSERT_EQ(seen.size(), 3u);  // turns 2..k
  EXPECT_TRUE(contains(seen[0].messages.back().content, "[Age]"));
  for (const auto& req : seen) EXPECT_LE(req.messages.size(), 4u);
  SeqOptions missing = opt;
  missing.init_scores = nullptr;
  EXPECT_THROW(llm_seq(client, "m", diabetes(), p, sp, Trainer(TaskKind::classification), missing),
               Error);
  SeqOptions zero;
  zero.k = 0;
  EXPECT_THROW(llm_seq(client, "m", diabetes(), p, sp, Trainer(TaskKind::classification), zero), Error);
  EXPECT_FALSE(default_seq_buffer(30).has_value());
  EXPECT_EQ(default_seq_buffer(31), 1);
}

TEST(Selectors, ScriptedRunsAreReproducible) {
  const auto p = toy_prepared();
  const auto sp = split(p, SplitSpec{});
  auto run = [&] {
    Recorder rec([](const ChatRequest& r) {
      const auto& u = r.messages.back().content;
      if (contains(u, "Rank all")) return std::string("1. BMI\n2. Age\n3. Glucose\n4. Ethnicity");
      if (contains(u, "Provide a score"))
        return fmt::format(R"({{"score": {}}})", static_cast<double>(u.size() % 10) / 10.0);
      const auto from = u.find("from: ");
      return u.substr(from + 6, u.find_first_of(",?", from) - from - 6);
    });
    ChatClient client(rec.backend());
    const auto iv = llm_score(client, "m", diabetes(), p.concepts, PromptVariant::default_prompt,
                              DecodingConfig::self_consistency());
    const auto rk = llm_rank(client, "m", diabetes(), p.concepts, DecodingConfig::greedy());
    SeqOptions opt;
    opt.k = 3;
    const auto sq = llm_seq(client, "m", diabetes(), p, sp, Trainer(TaskKind::classification), opt);
    return std::make_tuple(iv.scores, rk.order, sq.order);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::get<2>(a), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Selectors, JsonRoundTrip) {
  ImportanceVector iv{kAbc, {0.5, 0.25, 1.0}, {5, 4, 5}, {{"x"}, {}, {"y", "z"}}};
  const auto back = importance_from_json(to_json(iv));
  EXPECT_EQ(back.scores, iv.scores);
  EXPECT_EQ(back.reasonings, iv.reasonings);
  Ranking r{{2, 0, 1}, RankingSource::derived_from_scores};
  const auto rb = ranking_from_json(to_json(r));
  EXPECT_EQ(rb.order, r.order);
  EXPECT_EQ(rb.source, r.source);
  EXPECT_EQ(ranking_from_scores(iv).order, (std::vector<std::size_t>{2, 0, 1}));
  EXPECT_EQ(top_concept(iv), 2u);
}
