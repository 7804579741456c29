#include <malloc.h>

#include <cstdlib>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "dkaf/app/pipeline.hpp"
#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"
#include "dkaf/core/rng.hpp"
#include "dkaf/supervision/distant.hpp"

using namespace dkaf;
using namespace dkaf::app;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration");
  sub->add_option("--set", c.overrides, "Override a config key, e.g. --set epochs.rd=50");
  sub->add_flag("--quiet", c.quiet, "Suppress progress output");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  return apply_overrides(cfg, c.overrides);
}

Logger logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& s) { std::cerr << s << "\n"; };
}

nlohmann::json extra(const RunConfig& cfg) { return {{"config_hash", cfg.hash()}}; }

// When a config was given explicitly, checkpoints must come from the same config.
void maybe_check(const Common& c, const RunConfig& cfg, const std::string& ckpt) {
  if (!c.config.empty() || !c.overrides.empty()) check_config_hash(ckpt, cfg.hash());
}

std::vector<CorpusRecord> records_from(const std::string& corpus, const std::string& kb, const std::string& gold = {}) {
  return load_records(corpus, std::make_shared<const KnowledgeBase>(load_kb(kb)), gold);
}

// Per-dialog KBs from kb_dir/<id>.json, falling back to the shared KB.
std::vector<KnowledgeBase> per_dialog_kbs(const std::vector<CorpusRecord>& recs, const std::string& kb_dir) {
  std::vector<KnowledgeBase> out;
  for (const auto& r : recs) {
    const fs::path p = fs::path(kb_dir) / (r.dialog.id + ".json");
    out.push_back(!kb_dir.empty() && fs::exists(p) ? load_kb(p) : *r.train_kb);
  }
  return out;
}

fs::path default_run_dir(const RunConfig& cfg, const std::string& given) {
  if (!given.empty()) return given;
  const char* root = std::getenv("DKAF_RUN_ROOT");
  return fs::path(root ? root : "runs") / cfg.hash().substr(0, 12);
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates many short-lived matrices; keep freed memory in the heap.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);

  CLI::App app{"Dialog-KB arbitration pipeline"};
  app.require_subcommand(1);
  Common common;

  // simulate
  std::string out, ontology_path, base_kb_path, templates_path, checkin_path;
  int n_train = -1, n_test = -1;
  long horizon = -1;
  long long seed = -1;
  double stale = -1;
  auto* sim = app.add_subcommand("simulate", "Simulate a corpus against an evolving KB");
  add_common(sim, common);
  sim->add_option("--ontology", ontology_path);
  sim->add_option("--base-kb", base_kb_path);
  sim->add_option("--templates", templates_path);
  sim->add_option("--checkin", checkin_path);
  sim->add_option("--train", n_train);
  sim->add_option("--test", n_test);
  sim->add_option("--horizon", horizon);
  sim->add_option("--seed", seed);
  sim->add_option("--stale-fraction", stale);
  sim->add_option("--out", out)->required();

  // supervise
  std::string corpus, kb, kb_dir;
  auto* sup = app.add_subcommand("supervise", "Label RI candidates by distant supervision");
  add_common(sup, common);
  sup->add_option("--corpus", corpus)->required();
  sup->add_option("--kb", kb)->required();
  sup->add_option("--out", out)->required();

  // training subcommands
  std::string mem_path, curve, ri_path, rd_path, rc_path;
  int epochs = -1;
  auto training = [&](const char* name, const char* help, bool needs_mem) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, common);
    s->add_option("--corpus", corpus)->required();
    s->add_option("--kb", kb)->required();
    s->add_option("--kb-dir", kb_dir, "Per-dialog KBs named <dialog id>.json");
    s->add_option("--epochs", epochs);
    s->add_option("--seed", seed);
    s->add_option("--out", out)->required();
    s->add_option("--curve", curve, "Training curve CSV");
    if (needs_mem) s->add_option("--mem", mem_path)->required();
    return s;
  };
  auto* tmem = training("train-mem", "Train the masked entity model", false);
  auto* tri = training("train-ri", "Train the row insertion classifier", false);
  auto* trd = training("train-rd", "Train the row deletion policy", true);
  auto* trc = training("train-rc", "Train the row completion policy", true);

  // arbitrate
  std::string mode = "learned", order_str = "ri,rd,rc", kb_hat;
  auto* arbc = app.add_subcommand("arbitrate", "Arbitrate training dialogs against K_T");
  add_common(arbc, common);
  arbc->add_option("--corpus", corpus)->required();
  arbc->add_option("--kb", kb)->required();
  arbc->add_option("--ri", ri_path);
  arbc->add_option("--rd", rd_path);
  arbc->add_option("--rc", rc_path);
  arbc->add_option("--order", order_str);
  arbc->add_option("--mode", mode)->check(CLI::IsMember({"learned", "rules"}));
  arbc->add_option("--out", out)->required();
  arbc->add_option("--kb-hat", kb_hat, "Directory for the arbitrated per-dialog KBs");

  // train-tod
  std::string kb_source = "raw";
  auto* ttod = app.add_subcommand("train-tod", "Train the downstream responder");
  add_common(ttod, common);
  ttod->add_option("--corpus", corpus)->required();
  ttod->add_option("--kb", kb)->required();
  ttod->add_option("--kb-source", kb_source)->check(CLI::IsMember({"raw", "arbitrated"}));
  ttod->add_option("--kb-dir", kb_dir, "Arbitrated per-dialog KBs");
  ttod->add_option("--epochs", epochs);
  ttod->add_option("--seed", seed);
  ttod->add_option("--out", out)->required();
  ttod->add_option("--curve", curve);

  // respond
  std::string tod_path, dialog_id, history;
  int upto = -1;
  auto* resp = app.add_subcommand("respond", "Generate agent responses");
  add_common(resp, common);
  resp->add_option("--tod", tod_path)->required();
  resp->add_option("--kb", kb)->required();
  resp->add_option("--corpus", corpus, "Dialogs (jsonl)");
  resp->add_option("--dialog", dialog_id, "Respond after a prefix of this dialog");
  resp->add_option("--upto", upto, "Number of history utterances (default: all)");
  resp->add_option("--history", history, "A single dialog JSON file ending with a user turn");
  resp->add_option("--out", out, "Write predictions for every dialog of --corpus");

  // evaluate
  std::string predictions, gold, traces_path, truth_dir;
  auto* evalc = app.add_subcommand("evaluate", "Compute the metric report");
  add_common(evalc, common);
  evalc->add_option("--predictions", predictions);
  evalc->add_option("--gold", gold, "Test dialogs (jsonl)");
  evalc->add_option("--kb", kb)->required();
  evalc->add_option("--traces", traces_path);
  evalc->add_option("--ground-truth-dir", truth_dir, "Simulation directory with train.jsonl and kb_gold/");
  evalc->add_option("--out", out)->required();

  // report
  std::vector<std::string> reports;
  std::string curves;
  auto* rep = app.add_subcommand("report", "Render reports as markdown with curve plots");
  rep->add_option("--reports", reports)->required();
  rep->add_option("--curves", curves);
  rep->add_option("--out", out)->required();

  // pipeline and sweep
  std::string run_dir;
  auto* pipe = app.add_subcommand("pipeline", "Run every stage with caching");
  add_common(pipe, common);
  pipe->add_option("--run-dir", run_dir, "Default: $DKAF_RUN_ROOT/<config hash> (root defaults to runs)");
  auto* sweep = app.add_subcommand("sweep", "Run the pipeline at increasing inconsistency levels");
  add_common(sweep, common);
  sweep->add_option("--run-dir", run_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = rep->parsed() ? RunConfig{} : resolve(common);
    auto log = logger(common);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);

    if (sim->parsed()) {
      if (!ontology_path.empty()) cfg.paths.ontology = ontology_path;
      if (!base_kb_path.empty()) cfg.paths.base_kb = base_kb_path;
      if (!templates_path.empty()) cfg.paths.templates = templates_path;
      if (!checkin_path.empty()) cfg.paths.checkin = checkin_path;
      if (n_train > 0) cfg.train_dialogs = n_train;
      if (n_test > 0) cfg.test_dialogs = n_test;
      if (horizon > 0) cfg.horizon = horizon;
      if (stale >= 0) cfg.stale_fraction = stale;
      cfg.validate();
      const Inputs in = load_inputs(cfg.paths);
      save_corpus(simulate(in, cfg), in.ontology, in.profile, out);
      std::cout << read_json(fs::path(out) / "stats.json").at("inconsistency_rate_train") << "\n";
      return 0;
    }

    const Inputs in = load_inputs(cfg.paths);

    if (sup->parsed()) {
      std::vector<nlohmann::json> lines;
      for (const auto& rec : records_from(corpus, kb))
        for (const auto& c : label_candidates(rec.dialog.id, candidate_triples(rec.dialog, in.ontology), *rec.train_kb))
          lines.push_back(to_json(c));
      write_jsonl(out, lines);
      return 0;
    }

    if (tmem->parsed() || tri->parsed() || trd->parsed() || trc->parsed()) {
      auto recs = records_from(corpus, kb);
      if (tmem->parsed()) {
        if (epochs > 0) cfg.epochs.mem = epochs;
        if (!kb_dir.empty()) {
          auto kbs = per_dialog_kbs(recs, kb_dir);
          for (std::size_t i = 0; i < recs.size(); ++i) recs[i].train_kb = std::make_shared<const KnowledgeBase>(kbs[i]);
        }
        std::vector<mem::EpochStat> c;
        auto m = train_mem_model(recs, in, cfg, derive_seed(cfg.seed, "mem"), &c, log);
        m.save(out, extra(cfg));
        if (!curve.empty()) write_mem_curve(curve, c);
      } else if (tri->parsed()) {
        if (epochs > 0) cfg.epochs.ri = epochs;
        std::vector<arb::RIEpoch> c;
        auto ri = train_ri_model(recs, in, cfg, derive_seed(cfg.seed, "ri"), &c, log);
        ri.save(out, extra(cfg));
        if (!curve.empty()) write_ri_curve(curve, c);
      } else {
        maybe_check(common, cfg, mem_path);
        const auto m = mem::MemModel::load(mem_path);
        const auto kbs = per_dialog_kbs(recs, kb_dir);
        std::vector<arb::PolicyEpoch> c;
        auto on_epoch = [&](const arb::PolicyEpoch& e) {
          if (log) log("epoch " + std::to_string(e.epoch) + " avg_reward " + std::to_string(e.avg_reward));
        };
        if (trd->parsed()) {
          if (epochs > 0) cfg.epochs.rd = epochs;
          const auto pc = cfg.rd_config();
          std::vector<arb::RDExample> data;
          for (std::size_t i = 0; i < recs.size(); ++i)
            data.push_back({&recs[i].dialog, kbs[i], arb::rd_rewards(m, recs[i].dialog, kbs[i], pc.reward_tolerance, pc.keep_neutral)});
          arb::RDModel rd(in.ontology, in.profile, m.vocab(), pc, derive_seed(cfg.seed, "rd"));
          if (cfg.warm_start) rd.init_from(m);
          c = rd.train(data, derive_seed(cfg.seed, "rd-train"), on_epoch);
          rd.save(out, extra(cfg));
        } else {
          if (epochs > 0) cfg.epochs.rc = epochs;
          const auto pc = cfg.rc_config();
          std::vector<arb::RCState> states;
          for (std::size_t i = 0; i < recs.size(); ++i)
            for (auto& st : arb::build_rc_states(recs[i].dialog, kbs[i], in.ontology, in.profile)) {
              st.rewards = arb::rc_rewards(m, st, pc.reward_tolerance);
              states.push_back(std::move(st));
            }
          arb::RCModel rc(in.ontology, in.profile, m.vocab(), pc, derive_seed(cfg.seed, "rc"));
          if (cfg.warm_start) rc.init_from(m);
          c = rc.train(states, derive_seed(cfg.seed, "rc-train"), on_epoch);
          rc.save(out, extra(cfg));
        }
        if (!curve.empty()) write_policy_curve(curve, c);
      }
      return 0;
    }

    if (arbc->parsed()) {
      const auto recs = records_from(corpus, kb);
      const auto order = cascade::parse_order(order_str);
      std::vector<cascade::ArbitrationTrace> traces;
      if (mode == "rules") {
        traces = cascade::rule_arbitrate(recs, in.ontology, in.profile);
      } else {
        std::optional<arb::RIModel> ri;
        std::optional<arb::RDModel> rd;
        std::optional<arb::RCModel> rc;
        if (!ri_path.empty()) maybe_check(common, cfg, ri_path), ri.emplace(arb::RIModel::load(ri_path));
        if (!rd_path.empty()) maybe_check(common, cfg, rd_path), rd.emplace(arb::RDModel::load(rd_path));
        if (!rc_path.empty()) maybe_check(common, cfg, rc_path), rc.emplace(arb::RCModel::load(rc_path));
        if (!ri && !rd && !rc) throw InvalidInput("arbitrate: learned mode needs at least one of --ri --rd --rc");
        cascade::Models models{ri ? &*ri : nullptr, rd ? &*rd : nullptr, rc ? &*rc : nullptr, cfg.ri_threshold};
        traces = cascade::arbitrate(recs, models, order, in.ontology, in.profile);
      }
      save_traces(out, traces);
      if (!kb_hat.empty()) save_kb_hat(kb_hat, traces);
      const auto counts = cascade::count_edits(traces);
      std::cout << "insertions " << counts.insertions << " deletions " << counts.deletions << " completions "
                << counts.completions << "\n";
      return 0;
    }

    if (ttod->parsed()) {
      if (epochs > 0) cfg.epochs.tod = epochs;
      const auto recs = records_from(corpus, kb);
      if (kb_source == "arbitrated" && kb_dir.empty()) throw InvalidInput("train-tod: arbitrated source needs --kb-dir");
      std::vector<KnowledgeBase> kbs = per_dialog_kbs(recs, kb_source == "arbitrated" ? kb_dir : "");
      std::vector<const KnowledgeBase*> ptrs;
      for (const auto& k : kbs) ptrs.push_back(&k);
      std::vector<tod::TodEpoch> c;
      auto model = train_tod_model(recs, ptrs, in, cfg, derive_seed(cfg.seed, "tod/" + kb_source), &c, log);
      model.save(out, extra(cfg));
      if (!curve.empty()) write_tod_curve(curve, c);
      return 0;
    }

    if (resp->parsed()) {
      maybe_check(common, cfg, tod_path);
      const auto model = tod::Responder::load(tod_path);
      const KnowledgeBase k = load_kb(kb);
      if (!history.empty()) {
        std::cout << model.respond(dialog_from_json(read_json(history)), k) << "\n";
        return 0;
      }
      if (corpus.empty()) throw InvalidInput("respond: give --history or --corpus");
      auto recs = records_from(corpus, kb);
      if (!out.empty()) {
        std::vector<std::string> ids;
        for (const auto& r : recs) ids.push_back(r.dialog.id);
        save_predictions(out, ids, predict_split(model, recs));
        return 0;
      }
      for (const auto& r : recs) {
        if (r.dialog.id != dialog_id) continue;
        Dialog h = r.dialog;
        if (upto > 0) h.utterances.resize(std::min<std::size_t>(h.utterances.size(), static_cast<std::size_t>(upto)));
        std::cout << model.respond(h, k) << "\n";
        return 0;
      }
      throw InvalidInput("respond: dialog '" + dialog_id + "' not found");
    }

    if (evalc->parsed()) {
      eval::MetricReport report;
      report.config_hash = cfg.hash();
      auto shared = std::make_shared<const KnowledgeBase>(load_kb(kb));
      if (!predictions.empty()) {
        if (gold.empty()) throw InvalidInput("evaluate: --predictions needs --gold");
        const auto test = load_records(gold, shared);
        std::vector<std::string> ids;
        for (const auto& r : test) ids.push_back(r.dialog.id);
        eval::fill_response_metrics(report, test, load_predictions(predictions, ids), in.ontology);
        report.split = "test";
      }
      if (!traces_path.empty()) {
        if (truth_dir.empty()) throw InvalidInput("evaluate: --traces needs --ground-truth-dir");
        const auto train = load_records(fs::path(truth_dir) / "train.jsonl", shared, fs::path(truth_dir) / "kb_gold");
        fill_arbitration_metrics(report, train, load_traces(traces_path), in);
        report.split = report.split.empty() ? "train" : "arbitration: train; responses: test";
      }
      if (predictions.empty() && traces_path.empty()) throw InvalidInput("evaluate: nothing to evaluate");
      write_json(out, report.to_json());
      return 0;
    }

    if (rep->parsed()) {
      std::map<std::string, eval::MetricReport> rs;
      for (const auto& p : reports) rs[fs::path(p).stem().string()] = eval::MetricReport::from_json(read_json(p));
      write_file(out, render_report(rs, curves));
      return 0;
    }

    if (pipe->parsed()) {
      const fs::path dir = default_run_dir(cfg, run_dir);
      auto res = run_pipeline(cfg, dir, log);
      double total = 0;
      for (const auto& t : res.timings) total += t.seconds;
      std::cout << "run directory " << dir.string() << " (" << total << " s)\n";
      return 0;
    }

    if (sweep->parsed()) {
      const fs::path dir = default_run_dir(cfg, run_dir.empty() ? "" : run_dir) / (run_dir.empty() ? "sweep" : "");
      auto res = run_sweep(cfg, dir, log);
      for (std::size_t i = 0; i < res.levels.size(); ++i)
        std::cout << "level " << res.levels[i] << " inconsistency " << res.inconsistency[i] << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
