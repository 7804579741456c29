#include "dkaf/app/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"
#include "dkaf/core/judge.hpp"
#include "dkaf/core/rng.hpp"
#include "dkaf/nn/blocks.hpp"
#include "dkaf/supervision/distant.hpp"

namespace dkaf::app {

Inputs load_inputs(const Paths& paths) {
  Inputs in{load_ontology(paths.ontology), load_kb(paths.base_kb),
            Templates::from_json(read_json(paths.templates)), CheckinProfile::from_json(read_json(paths.checkin)),
            DomainProfile{}};
  in.base_kb.validate(in.ontology);
  return in;
}

SimOutput simulate(const Inputs& in, const RunConfig& cfg) {
  return run_simulation(in.ontology, in.base_kb, in.templates, in.checkin, cfg.sim_config(), in.profile);
}

namespace {

std::vector<Dialog> dialogs_of(const std::vector<CorpusRecord>& records) {
  std::vector<Dialog> out;
  for (const auto& r : records) out.push_back(r.dialog);
  return out;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

}  // namespace

mem::MemModel train_mem_model(const std::vector<CorpusRecord>& train, const Inputs& in, const RunConfig& cfg,
                              std::uint64_t seed, std::vector<mem::EpochStat>* curve, const Logger& log) {
  std::vector<mem::MemExample> data;
  for (const auto& r : train) {
    if (!r.train_kb) throw InvalidInput("train-mem: record " + r.dialog.id + " has no KB");
    data.push_back({&r.dialog, r.train_kb.get()});
  }
  const auto mc = cfg.mem_config();
  mem::MemModel m(in.ontology, in.profile, nn::Vocab::build(in.ontology, dialogs_of(train)), mc, seed);
  auto c = m.train(data, mc.epochs, derive_seed(seed, "train"), [&](const mem::EpochStat& s) {
    if (log) log("mem epoch " + std::to_string(s.epoch) + " loss " + fmt(s.loss));
  });
  if (curve) *curve = std::move(c);
  return m;
}

arb::RIModel train_ri_model(const std::vector<CorpusRecord>& train, const Inputs& in, const RunConfig& cfg,
                            std::uint64_t seed, std::vector<arb::RIEpoch>* curve, const Logger& log) {
  std::map<std::string, const Dialog*> by_id;
  for (const auto& r : train) by_id[r.dialog.id] = &r.dialog;
  auto ds = build_ri_dataset(train, in.ontology);
  arb::RIModel ri(in.ontology, nn::Vocab::build(in.ontology, dialogs_of(train)), cfg.ri_config(), seed);
  auto c = ri.train(ds.train, by_id, derive_seed(seed, "train"), [&](const arb::RIEpoch& e) {
    if (log) log("ri epoch " + std::to_string(e.epoch) + " val_acc " + fmt(e.validation_accuracy));
  });
  if (curve) *curve = std::move(c);
  return ri;
}

tod::Responder train_tod_model(const std::vector<CorpusRecord>& train, const std::vector<const KnowledgeBase*>& kbs,
                               const Inputs& in, const RunConfig& cfg, std::uint64_t seed,
                               std::vector<tod::TodEpoch>* curve, const Logger& log) {
  if (kbs.size() != train.size()) throw InvalidInput("train-tod: one KB per record is required");
  std::vector<tod::TodExample> data;
  for (std::size_t i = 0; i < train.size(); ++i) data.push_back({&train[i].dialog, kbs[i]});
  return tod::train_responder(data, in.ontology, in.profile, cfg.tod_config(), seed, curve,
                              [&](const tod::TodEpoch& e) {
                                if (log)
                                  log("tod epoch " + std::to_string(e.epoch) + " loss " + fmt(e.loss) + " token_acc " +
                                      fmt(e.token_accuracy));
                              });
}

eval::DialogResponses predict_split(const tod::Responder& model, const std::vector<CorpusRecord>& records) {
  eval::DialogResponses out;
  for (const auto& r : records) {
    if (!r.train_kb) throw InvalidInput("predict: record " + r.dialog.id + " has no KB");
    out.push_back(model.predict_dialog(r.dialog, *r.train_kb));
  }
  return out;
}

void write_mem_curve(const fs::path& path, const std::vector<mem::EpochStat>& curve) {
  std::vector<std::vector<double>> rows;
  for (const auto& e : curve) rows.push_back({double(e.epoch), e.loss, e.grad_norm});
  write_csv(path, {"epoch", "loss", "grad_norm"}, rows);
}

void write_ri_curve(const fs::path& path, const std::vector<arb::RIEpoch>& curve) {
  std::vector<std::vector<double>> rows;
  for (const auto& e : curve) rows.push_back({double(e.epoch), e.loss, e.train_accuracy, e.validation_accuracy});
  write_csv(path, {"epoch", "loss", "train_accuracy", "validation_accuracy"}, rows);
}

void write_policy_curve(const fs::path& path, const std::vector<arb::PolicyEpoch>& curve) {
  std::vector<std::vector<double>> rows;
  for (const auto& e : curve) rows.push_back({double(e.epoch), e.avg_reward, e.avg_reward_all, e.loss});
  write_csv(path, {"epoch", "avg_reward", "avg_reward_all", "loss"}, rows);
}

void write_tod_curve(const fs::path& path, const std::vector<tod::TodEpoch>& curve) {
  std::vector<std::vector<double>> rows;
  for (const auto& e : curve) rows.push_back({double(e.epoch), e.loss, e.token_accuracy});
  write_csv(path, {"epoch", "loss", "token_accuracy"}, rows);
}

void fill_arbitration_metrics(eval::MetricReport& report, const std::vector<CorpusRecord>& train,
                              const std::vector<cascade::ArbitrationTrace>& traces, const Inputs& in) {
  if (traces.size() != train.size()) throw InvalidInput("arbitration metrics: one trace per record is required");
  std::vector<RecordTruth> truth;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (traces[i].dialog_id != train[i].dialog.id)
      throw InvalidInput("arbitration metrics: trace " + traces[i].dialog_id + " does not match " + train[i].dialog.id);
    truth.push_back(record_truth(train[i], in.ontology, in.profile));
    bad += consistency_judge(train[i], traces[i].result_kb, in.ontology, in.profile) ? 0 : 1;
  }
  report.ri = eval::ri_f1(traces, truth);
  report.rd = eval::rd_f1(traces, truth);
  report.rc_accuracy = eval::rc_accuracy(traces, train, in.ontology, in.profile).accuracy();
  report.inconsistency_rate_pre = inconsistency_rate(train, in.ontology, in.profile);
  report.inconsistency_rate_post = static_cast<double>(bad) / static_cast<double>(train.size());
  const auto c = cascade::count_edits(traces);
  report.insertion_count = c.insertions;
  report.deletion_count = c.deletions;
  report.completion_count = c.completions;
}

namespace {

std::string opt(const std::optional<double>& v, double scale = 1.0, int precision = 3) {
  return v ? fmt(*v * scale, precision) : "-";
}

std::string text_plot(const std::vector<double>& ys, int height = 8, int width = 60) {
  if (ys.empty()) return "(empty)\n";
  std::vector<double> s;
  for (int i = 0; i < std::min<int>(width, static_cast<int>(ys.size())); ++i) {
    const std::size_t k = ys.size() <= static_cast<std::size_t>(width)
                              ? static_cast<std::size_t>(i)
                              : static_cast<std::size_t>(i) * (ys.size() - 1) / static_cast<std::size_t>(width - 1);
    s.push_back(ys[k]);
  }
  const auto [lo_it, hi_it] = std::minmax_element(s.begin(), s.end());
  const double lo = *lo_it, hi = *hi_it, span = hi > lo ? hi - lo : 1.0;
  std::ostringstream out;
  for (int row = height - 1; row >= 0; --row) {
    const double level = lo + span * row / std::max(1, height - 1);
    out << std::setw(10) << fmt(level, 4) << " |";
    for (double y : s) {
      const int cell = static_cast<int>(std::lround((y - lo) / span * (height - 1)));
      out << (cell == row ? '*' : ' ');
    }
    out << "\n";
  }
  out << std::string(11, ' ') << '+' << std::string(s.size(), '-') << "\n";
  return out.str();
}

}  // namespace

std::string render_report(const std::map<std::string, eval::MetricReport>& reports, const fs::path& curve_dir) {
  std::ostringstream md;
  md << "# Run report\n\n";
  md << "| system | resp acc | dialog acc | BLEU | entity F1 | KB entity F1 | RI F1 | RD F1 | RC acc | incons pre "
        "| incons post | ins | del | comp |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, r] : reports) {
    auto count = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("-"); };
    md << "| " << name << " | " << opt(r.response_accuracy) << " | " << opt(r.dialog_accuracy) << " | "
       << opt(r.bleu, 1.0, 2) << " | " << opt(r.entity_f1) << " | " << opt(r.kb_entity_f1) << " | "
       << (r.ri ? fmt(r.ri->macro_f1, 3) : "-") << " | " << (r.rd ? fmt(r.rd->macro_f1, 3) : "-") << " | "
       << opt(r.rc_accuracy) << " | " << opt(r.inconsistency_rate_pre) << " | " << opt(r.inconsistency_rate_post)
       << " | " << count(r.insertion_count) << " | " << count(r.deletion_count) << " | "
       << count(r.completion_count) << " |\n";
  }
  if (!reports.empty()) {
    const auto& any = reports.begin()->second;
    md << "\nBLEU smoothing: " << any.bleu_smoothing << ". Entity F1 averaging: " << any.entity_f1_averaging
       << ". Config hash: `" << any.config_hash << "`.\n";
  }
  if (!curve_dir.empty() && fs::exists(curve_dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(curve_dir))
      if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    md << "\n## Training curves\n";
    for (const auto& f : files) {
      std::vector<std::string> header;
      auto rows = read_csv(f, &header);
      if (header.size() < 2) continue;
      std::vector<double> ys;
      for (const auto& r : rows) ys.push_back(r[1]);
      md << "\n### " << f.stem().string() << " (" << header[1] << " by epoch)\n\n```\n" << text_plot(ys) << "```\n";
    }
  }
  return md.str();
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stages) st.push_back({{"name", s.name}, {"key", s.key}, {"outputs", s.outputs}});
  return {{"tool_version", tool_version}, {"config_hash", config_hash}, {"config", config},
          {"inputs", inputs},             {"stages", st}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.tool_version = j.at("tool_version");
  m.config_hash = j.at("config_hash");
  m.config = j.at("config");
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  for (const auto& s : j.at("stages"))
    m.stages.push_back({s.at("name"), s.at("key"), s.at("outputs").get<std::map<std::string, std::string>>()});
  return m;
}

std::string path_digest(const fs::path& path) {
  if (!fs::exists(path)) throw InvalidInput("digest: missing " + path.string());
  if (!fs::is_directory(path)) return file_digest(path);
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(path))
    if (e.is_regular_file()) entries.push_back({fs::relative(e.path(), path).generic_string(), sha256_hex(read_file(e.path()))});
  std::sort(entries.begin(), entries.end());
  std::string all;
  for (const auto& [p, d] : entries) all += p + " " + d + "\n";
  return sha256_hex(all);
}

std::string order_tag(const cascade::Order& order) {
  std::string s = cascade::to_string(order);
  std::replace(s.begin(), s.end(), ',', '-');
  return s;
}

namespace {

class Runner {
 public:
  Runner(const RunConfig& cfg, fs::path dir, const Logger& log) : dir_(std::move(dir)), log_(log) {
    manifest.tool_version = tool_version;
    manifest.config_hash = cfg.hash();
    manifest.config = cfg.to_json();
  }

  void stage(const std::string& name, const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
             const std::function<void()>& body) {
    std::string key_src = name + "\n" + manifest.config_hash + "\n";
    for (const auto& in : inputs) key_src += in + " " + path_digest(dir_ / in) + "\n";
    StageRecord rec{name, sha256_hex(key_src), {}};
    const fs::path record_file = dir_ / "stages" / (name + ".json");
    const auto t0 = std::chrono::steady_clock::now();
    bool cached = false;
    if (fs::exists(record_file)) {
      const auto old = read_json(record_file);
      cached = old.value("key", "") == rec.key;
      for (const auto& out : outputs) {
        if (!cached) break;
        cached = fs::exists(dir_ / out) && old.at("outputs").value(out, "") == path_digest(dir_ / out);
      }
    }
    if (cached) {
      if (log_) log_("stage " + name + ": cached");
    } else {
      if (log_) log_("stage " + name + ": running");
      for (const auto& out : outputs)
        if (fs::exists(dir_ / out)) fs::remove_all(dir_ / out);
      try {
        body();
      } catch (const std::exception& e) {
        throw Error("stage " + name + " failed: " + e.what());
      }
    }
    for (const auto& out : outputs) rec.outputs[out] = path_digest(dir_ / out);
    if (!cached) write_json(record_file, {{"key", rec.key}, {"outputs", rec.outputs}});
    manifest.stages.push_back(rec);
    timings.push_back({name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), cached});
  }

  RunManifest manifest;
  std::vector<StageTiming> timings;

 private:
  fs::path dir_;
  Logger log_;
};

nlohmann::json timings_json(const std::vector<StageTiming>& ts) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& t : ts) j.push_back({{"stage", t.name}, {"seconds", t.seconds}, {"cached", t.cached}});
  return j;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& run_dir, const Logger& log) {
  cfg.validate();
  const Inputs in = load_inputs(cfg.paths);
  Runner run(cfg, run_dir, log);
  for (const std::string& p : {cfg.paths.ontology, cfg.paths.base_kb, cfg.paths.templates, cfg.paths.checkin})
    run.manifest.inputs[p] = path_digest(p);
  const std::string hash = run.manifest.config_hash;
  const nlohmann::json extra{{"config_hash", hash}};
  const fs::path& d = run_dir;

  run.stage("simulate", {}, {"sim"}, [&] { save_corpus(simulate(in, cfg), in.ontology, in.profile, d / "sim"); });
  const Corpus corpus = load_corpus(d / "sim");

  run.stage("supervise", {"sim"}, {"supervise/ri_data.jsonl"}, [&] {
    std::vector<nlohmann::json> lines;
    for (const auto& rec : corpus.train)
      for (const auto& c : label_candidates(rec.dialog.id, candidate_triples(rec.dialog, in.ontology), *rec.train_kb))
        lines.push_back(to_json(c));
    write_jsonl(d / "supervise/ri_data.jsonl", lines);
  });

  run.stage("train-mem", {"sim"}, {"models/mem.ckpt", "curves/mem.csv"}, [&] {
    std::vector<mem::EpochStat> curve;
    auto m = train_mem_model(corpus.train, in, cfg, derive_seed(cfg.seed, "mem"), &curve, log);
    m.save((d / "models/mem.ckpt").string(), extra);
    write_mem_curve(d / "curves/mem.csv", curve);
  });

  run.stage("train-ri", {"sim", "supervise/ri_data.jsonl"}, {"models/ri.ckpt", "curves/ri.csv"}, [&] {
    std::vector<arb::RIEpoch> curve;
    auto ri = train_ri_model(corpus.train, in, cfg, derive_seed(cfg.seed, "ri"), &curve, log);
    ri.save((d / "models/ri.ckpt").string(), extra);
    write_ri_curve(d / "curves/ri.csv", curve);
  });

  run.stage("arbitrate-rules", {"sim"}, {"arb/rules/traces.jsonl", "arb/rules/kb_hat"}, [&] {
    auto traces = cascade::rule_arbitrate(corpus.train, in.ontology, in.profile);
    save_traces(d / "arb/rules/traces.jsonl", traces);
    save_kb_hat(d / "arb/rules/kb_hat", traces);
  });

  for (const auto& order : cfg.orders) {
    const std::string tag = order_tag(order);
    const std::string a = "arb/" + tag + "/";
    run.stage("cascade-" + tag, {"sim", "models/mem.ckpt", "models/ri.ckpt"},
              {a + "traces.jsonl", a + "kb_hat", "models/rd_" + tag + ".ckpt", "models/rc_" + tag + ".ckpt",
               "curves/rd_" + tag + ".csv", "curves/rc_" + tag + ".csv"},
              [&] {
                check_config_hash(d / "models/mem.ckpt", hash);
                check_config_hash(d / "models/ri.ckpt", hash);
                const auto m = mem::MemModel::load((d / "models/mem.ckpt").string());
                const auto ri = arb::RIModel::load((d / "models/ri.ckpt").string());
                auto res = cascade::learn_cascade(corpus.train, m, ri, order, cfg.learn_config(),
                                                  derive_seed(cfg.seed, "cascade/" + tag), log);
                save_traces(d / (a + "traces.jsonl"), res.traces);
                save_kb_hat(d / (a + "kb_hat"), res.traces);
                res.rd->save((d / ("models/rd_" + tag + ".ckpt")).string(), extra);
                res.rc->save((d / ("models/rc_" + tag + ".ckpt")).string(), extra);
                write_policy_curve(d / ("curves/rd_" + tag + ".csv"), res.rd_curve);
                write_policy_curve(d / ("curves/rc_" + tag + ".csv"), res.rc_curve);
              });
  }

  std::vector<std::string> systems{"raw"};
  if (cfg.tod_rules) systems.push_back("rules");
  for (const auto& order : cfg.orders) systems.push_back(order_tag(order));
  auto traces_of = [&](const std::string& sys) { return "arb/" + sys + "/traces.jsonl"; };

  PipelineResult result;
  std::vector<std::string> report_files;
  for (const auto& sys : systems) {
    std::vector<std::string> inputs{"sim"};
    if (sys != "raw") inputs.push_back(traces_of(sys));
    const std::string ckpt = "models/tod_" + sys + ".ckpt";
    run.stage("train-tod-" + sys, inputs, {ckpt, "curves/tod_" + sys + ".csv"}, [&] {
      std::vector<cascade::ArbitrationTrace> traces;
      std::vector<const KnowledgeBase*> kbs;
      if (sys == "raw") {
        for (const auto& r : corpus.train) kbs.push_back(r.train_kb.get());
      } else {
        traces = load_traces(d / traces_of(sys));
        for (const auto& t : traces) kbs.push_back(&t.result_kb);
      }
      std::vector<tod::TodEpoch> curve;
      auto model = train_tod_model(corpus.train, kbs, in, cfg, derive_seed(cfg.seed, "tod/" + sys), &curve, log);
      model.save((d / ckpt).string(), extra);
      write_tod_curve(d / ("curves/tod_" + sys + ".csv"), curve);
    });

    inputs.push_back(ckpt);
    const std::string report_file = "reports/" + sys + ".json";
    report_files.push_back(report_file);
    run.stage("evaluate-" + sys, inputs, {"predictions/" + sys + ".jsonl", report_file}, [&] {
      check_config_hash(d / ckpt, hash);
      const auto model = tod::Responder::load((d / ckpt).string());
      const auto preds = predict_split(model, corpus.test);
      std::vector<std::string> ids;
      for (const auto& r : corpus.test) ids.push_back(r.dialog.id);
      save_predictions(d / ("predictions/" + sys + ".jsonl"), ids, preds);
      eval::MetricReport rep;
      rep.config_hash = hash;
      rep.split = sys == "raw" ? "test" : "arbitration: train; responses: test";
      eval::fill_response_metrics(rep, corpus.test, preds, in.ontology);
      if (sys == "raw") {
        rep.inconsistency_rate_pre = inconsistency_rate(corpus.train, in.ontology, in.profile);
      } else {
        fill_arbitration_metrics(rep, corpus.train, load_traces(d / traces_of(sys)), in);
      }
      write_json(d / report_file, rep.to_json());
    });
    result.reports[sys] = eval::MetricReport::from_json(read_json(d / report_file));
  }

  auto report_inputs = report_files;
  for (const auto& sys : systems) report_inputs.push_back("curves/tod_" + sys + ".csv");
  run.stage("report", report_inputs, {"report.md"},
            [&] { write_file(d / "report.md", render_report(result.reports, d / "curves")); });

  write_json(d / "manifest.json", run.manifest.to_json());
  write_json(d / "timings.json", timings_json(run.timings));
  result.manifest = run.manifest;
  result.timings = run.timings;
  return result;
}

SweepResult run_sweep(const RunConfig& cfg, const fs::path& run_dir, const Logger& log) {
  if (cfg.sweep_levels.empty()) throw InvalidInput("sweep: no levels configured");
  SweepResult out;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.sweep_levels.size(); ++i) {
    RunConfig c = cfg;
    c.stale_fraction = cfg.sweep_levels[i];
    if (log) log("sweep level " + std::to_string(i) + " stale_fraction " + fmt(c.stale_fraction, 3));
    auto res = run_pipeline(c, run_dir / ("level_" + std::to_string(i)), log);
    const auto& raw = res.reports.at("raw");
    out.levels.push_back(c.stale_fraction);
    out.inconsistency.push_back(raw.inconsistency_rate_pre.value_or(0.0));
    nlohmann::json systems = nlohmann::json::object();
    for (const auto& [name, r] : res.reports) {
      nlohmann::json s{{"dialog_accuracy", r.dialog_accuracy.value_or(0.0)},
                       {"response_accuracy", r.response_accuracy.value_or(0.0)}};
      if (r.inconsistency_rate_post) s["inconsistency_rate_post"] = *r.inconsistency_rate_post;
      systems[name] = s;
    }
    rows.push_back({{"level", c.stale_fraction},
                    {"config_hash", c.hash()},
                    {"inconsistency_rate", out.inconsistency.back()},
                    {"systems", systems}});
    out.runs.push_back(std::move(res));
  }
  write_json(run_dir / "sweep.json", {{"levels", rows}});
  std::ostringstream md;
  md << "# Inconsistency sweep\n\n| stale fraction | inconsistency |";
  const auto& names = out.runs.front().reports;
  for (const auto& [name, _] : names) md << " " << name << " dialog acc |";
  md << "\n|---|---|" << [&] {
    std::string s;
    for (std::size_t k = 0; k < names.size(); ++k) s += "---|";
    return s;
  }() << "\n";
  for (std::size_t i = 0; i < out.runs.size(); ++i) {
    md << "| " << fmt(out.levels[i], 2) << " | " << fmt(out.inconsistency[i], 3) << " |";
    for (const auto& [name, r] : out.runs[i].reports) md << " " << fmt(r.dialog_accuracy.value_or(0.0), 3) << " |";
    md << "\n";
  }
  write_file(run_dir / "sweep.md", md.str());
  return out;
}

}  // namespace dkaf::app
