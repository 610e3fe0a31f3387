// Copyright 2026 The TrajLM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"
#include "trajlm/corpus.h"
#include "trajlm/eval.h"
#include "trajlm/intervene.h"
#include "trajlm/model.h"
#include "trajlm/objective.h"
#include "trajlm/plot.h"
#include "trajlm/synth.h"
#include "trajlm/vocab.h"

namespace fs = std::filesystem;
using namespace trajlm;

namespace {

void log(const std::string& msg) { fmt::print(stderr, "[trajlm] {}\n", msg); }

void warn_frequency(const InterventionSpec& spec) {
  if (spec.kind == InterventionSpec::Kind::kCategoricalAppend && spec.frequency == kThreeTimesWeekly) {
    log(fmt::format("warning: '{}' uses three-times-weekly (12 tokens/month), which encodes more "
                    "doses than daily (10)", spec.label));
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("failed writing '{}'", path.string()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("missing file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw Error(fmt::format("missing file '{}'", p.string()));
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("TRAJLM_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string_view(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(fmt::format("TRAJLM_SEED='{}' is not an unsigned integer", s));
  }
}

std::vector<EncodedParticipant> encode_all(const std::vector<ParticipantRecord>& records,
                                           const Vocabulary& vocab, const ModelConfig& mc) {
  std::vector<EncodedParticipant> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_participant(r, vocab, mc.max_seq_len, mc.year_base));
  return out;
}

// A checkpoint loaded against a vocabulary, optionally checked against the
// training config that produced it.
struct Loaded {
  Vocabulary vocab;
  LoadedCheckpoint ckpt;
  ReportMeta meta;
};

Loaded load_model(const fs::path& ckpt, const fs::path& vocab_path, const std::string& config_path) {
  require_file(ckpt);
  Loaded l{Vocabulary::load(vocab_path), {}, {}};
  l.ckpt = load_checkpoint(ckpt, l.vocab);
  if (!config_path.empty()) {
    const auto hash = TrainConfig::load(config_path).hash();
    if (hash != l.ckpt.meta.config_hash) {
      throw Error(fmt::format("config hash mismatch: '{}' hashes to {}, checkpoint was trained with {}",
                              config_path, hash, l.ckpt.meta.config_hash));
    }
  }
  l.meta = {std::string(kVersion), l.ckpt.meta.seed, l.ckpt.meta.config_hash, hex64(l.vocab.fingerprint())};
  log(fmt::format("checkpoint {} seed={} config_hash={} library_version={}", ckpt.string(), l.meta.seed,
                  l.meta.config_hash, l.ckpt.meta.library_version));
  return l;
}

std::string sequence_json(const EncodedParticipant& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["age"] = p.age;
  j["sex"] = std::string(to_string(p.sex));
  j["tokens"] = p.seq.tokens;
  j["values"] = p.seq.values;
  j["modalities"] = p.seq.modalities;
  j["times"] = p.seq.times;
  j["visit_boundary"] = p.seq.visit_boundary;
  return j.dump();
}

void plot_predictions(const fs::path& dir, const Predictions& preds, const Vocabulary& vocab,
                      const std::string& what) {
  fs::create_directories(dir);
  for (const auto& [m, set] : preds) {
    if (!vocab.modality(m).continuous() || set.predicted.empty()) continue;
    const auto& name = vocab.modality(m).name;
    write_text(dir / fmt::format("{}_{}.svg", what, name),
               plot::scatter(set.actual, set.predicted, fmt::format("{}: {}", what, name), "observed", "predicted"));
  }
}

// --- subcommands -----------------------------------------------------------

void cmd_build_vocab(const std::string& cohort, const std::string& out, const std::vector<std::string>& bins) {
  require_file(cohort);
  std::map<std::string, int> overrides;
  for (const auto& b : bins) {
    const auto eq = b.find('=');
    if (eq == std::string::npos) throw Error(fmt::format("--bins entry '{}' must be modality=K", b));
    try {
      overrides[b.substr(0, eq)] = std::stoi(b.substr(eq + 1));
    } catch (const std::exception&) {
      throw Error(fmt::format("--bins entry '{}' has a non-integer bin count", b));
    }
  }
  const auto records = read_cohort(cohort);
  const auto vocab = build_vocabulary(collect_raw_modalities(records, overrides));
  for (const auto& w : vocab.warnings()) log("warning: " + w);
  vocab.save(out);
  log(fmt::format("vocabulary: {} modalities, {} tokens, fingerprint {} -> {}", vocab.modality_count(),
                  vocab.total_tokens(), hex64(vocab.fingerprint()), out));
}

void cmd_tokenize(const std::string& cohort, const std::string& vocab_path, const std::string& out, int max_len) {
  require_file(cohort);
  const auto vocab = Vocabulary::load(vocab_path);
  const auto records = read_cohort(cohort);
  std::string text;
  for (const auto& r : records) text += sequence_json(encode_participant(r, vocab, max_len)) + "\n";
  write_text(out, text);
  log(fmt::format("tokenized {} participants -> {}", records.size(), out));
}

void cmd_train(const std::string& cohort, const std::string& vocab_path, const std::string& config_path,
               const std::string& out, const std::string& metrics, int workers) {
  require_file(cohort);
  auto cfg = TrainConfig::load(config_path);
  if (const auto s = env_seed()) {
    log(fmt::format("TRAJLM_SEED={} overrides config seed {}", *s, cfg.seed));
    cfg.seed = *s;
  }
  if (workers > 0) cfg.workers = workers;
  cfg.validate();
  const auto vocab = Vocabulary::load(vocab_path);
  const auto mc = cfg.model_config(vocab);
  const auto records = read_cohort(cohort);
  const auto all = encode_all(records, vocab, mc);
  auto [train_set, val_set] = split_train_val(all, cfg.val_fraction, cfg.seed);
  log(fmt::format("train: {} participants ({} train / {} validation), seed={} config_hash={} library_version={}",
                  all.size(), train_set.size(), val_set.size(), cfg.seed, cfg.hash(), kVersion));
  std::string log_text = fmt::format("# library_version={} seed={} config_hash={} vocab_fingerprint={}\n{}\n",
                                     kVersion, cfg.seed, cfg.hash(), hex64(vocab.fingerprint()), kMetricsHeader);
  const auto result = train(train_set, val_set, vocab, cfg, [&](const TrainRecord& r) {
    log_text += metrics_row(r) + "\n";
    if (r.val_loss) {
      log(fmt::format("step {} lr {:.3g} loss {:.4f} val {:.4f}", r.step, r.lr, r.loss.total, *r.val_loss));
    }
  });
  if (result.diverged) throw Error("training diverged (non-finite loss); no checkpoint written");
  CheckpointMeta meta;
  meta.vocab_fingerprint = vocab.fingerprint();
  meta.seed = cfg.seed;
  meta.config_hash = cfg.hash();
  meta.library_version = std::string(kVersion);
  meta.extra["train_config"] = cfg.to_string();
  meta.extra["best_step"] = std::to_string(result.best_step);
  meta.extra["initial_val_loss"] = fmt::format("{:.9g}", result.initial_val_loss);
  meta.extra["best_val_loss"] = fmt::format("{:.9g}", result.best_val_loss);
  save_checkpoint(out, result.best, meta);
  if (!metrics.empty()) write_text(metrics, log_text);
  log(fmt::format("validation loss {:.4f} -> {:.4f} (best step {}); checkpoint -> {}", result.initial_val_loss,
                  result.best_val_loss, result.best_step, out));
}

void cmd_eval_ntp(const std::string& ckpt, const std::string& vocab_path, const std::string& config,
                  const std::string& cohort, const std::string& report, const std::string& json_out,
                  const std::string& plot_dir, int workers) {
  require_file(cohort);
  const auto l = load_model(ckpt, vocab_path, config);
  const auto test = encode_all(read_cohort(cohort), l.vocab, l.ckpt.model.config());
  const auto preds = predict_within_visit(l.ckpt.model, test, l.vocab, workers);
  const auto rep = summarize(preds, l.vocab);
  write_text(report, rep.to_csv(l.meta));
  if (!json_out.empty()) write_text(json_out, rep.to_json(l.meta));
  if (!plot_dir.empty()) plot_predictions(plot_dir, preds, l.vocab, "ntp");
  for (const auto& a : rep.aggregates) {
    log(fmt::format("{}: {} modalities, median r {:.3f}", a.group, a.count, a.median_r));
  }
  log(fmt::format("report -> {}", report));
}

// Splits a cohort the way training did, using the config stored in the
// checkpoint.
std::pair<std::vector<EncodedParticipant>, std::vector<EncodedParticipant>> training_split(
    const Loaded& l, const std::vector<EncodedParticipant>& all) {
  const auto it = l.ckpt.meta.extra.find("train_config");
  if (it == l.ckpt.meta.extra.end()) throw Error("checkpoint has no stored training config; pass --train-cohort");
  const auto cfg = TrainConfig::parse(it->second);
  return split_train_val(all, cfg.val_fraction, cfg.seed);
}

void cmd_eval_longitudinal(const std::string& ckpt, const std::string& vocab_path, const std::string& config,
                           const std::string& cohort, const std::string& train_cohort,
                           const std::string& baselines, const std::string& report,
                           const std::string& json_out, const std::string& plot_dir, int workers) {
  require_file(cohort);
  const auto l = load_model(ckpt, vocab_path, config);
  std::vector<BaselineKind> kinds;
  std::stringstream ss(baselines);
  for (std::string b; std::getline(ss, b, ',');) {
    if (!b.empty()) kinds.push_back(parse_baseline(b));
  }
  const auto all = encode_all(read_cohort(cohort), l.vocab, l.ckpt.model.config());
  std::vector<EncodedParticipant> train_set, test_set;
  if (!train_cohort.empty()) {
    require_file(train_cohort);
    train_set = encode_all(read_cohort(train_cohort), l.vocab, l.ckpt.model.config());
    test_set = all;
  } else {
    std::tie(train_set, test_set) = training_split(l, all);
    log(fmt::format("evaluating the held-out split: {} participants (baselines fit on {})", test_set.size(),
                    train_set.size()));
  }
  const auto rep = eval_longitudinal(l.ckpt.model, test_set, l.vocab, kinds, train_set, workers);
  if (rep.comparison.empty() && rep.model.modalities.empty()) log("no participants with two visits; empty report");
  for (const auto& s : rep.skipped) log(s);
  write_text(report, rep.to_csv(l.meta));
  if (!json_out.empty()) write_text(json_out, rep.to_json(l.meta));
  if (!plot_dir.empty()) {
    const auto pairs = visit_pairs(test_set, l.vocab);
    const auto out = predict_longitudinal(l.ckpt.model, test_set, pairs, l.vocab, workers);
    Predictions preds;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (!l.vocab.modality(pairs[i].modality).continuous()) continue;
      preds[pairs[i].modality].predicted.push_back(out.expected[i]);
      preds[pairs[i].modality].actual.push_back(pairs[i].v2_value);
    }
    plot_predictions(plot_dir, preds, l.vocab, "v2");
  }
  for (const auto& r : rep.comparison) {
    std::string line = fmt::format("{}: n={} model r={:.3f}", r.modality, r.n, r.model.r);
    for (const auto& [n, c] : r.baselines) line += fmt::format(" {} r={:.3f}", n, c.r);
    log(line);
  }
  log(fmt::format("report -> {}", report));
}

void cmd_probe(const std::string& ckpt, const std::string& vocab_path, const std::string& config,
               const std::string& m_in, const std::string& m_out, const std::string& time, double age,
               const std::string& sex, const std::string& report, const std::string& plot_path) {
  const auto l = load_model(ckpt, vocab_path, config);
  ProbeOptions opt;
  if (!time.empty()) opt.time = DateTime::parse(time);
  opt.age = age;
  opt.sex = parse_sex(sex);
  const auto curve = crossmodal_sweep(l.ckpt.model, l.vocab, l.vocab.index_of(m_in), l.vocab.index_of(m_out), opt);
  std::string csv = fmt::format("# library_version={} seed={} config_hash={} vocab_fingerprint={}\n", l.meta.library_version,
                                l.meta.seed, l.meta.config_hash, l.meta.vocab_fingerprint);
  csv += fmt::format("# probe time={} age={} sex={}\n", opt.time.iso(), opt.age, to_string(opt.sex));
  csv += fmt::format("{}_midpoint,expected_{}\n", m_in, m_out);
  plot::Series s{fmt::format("E[{} | {}]", m_out, m_in), {}, {}, {}};
  for (const auto& p : curve) {
    csv += fmt::format("{:.9g},{:.9g}\n", p.input, p.expected);
    s.x.push_back(p.input);
    s.y.push_back(p.expected);
  }
  write_text(report, csv);
  if (!plot_path.empty()) write_text(plot_path, plot::lines(std::span(&s, 1), "cross-modal probe", m_in, m_out));
  log(fmt::format("{} bins -> {}", curve.size(), report));
}

void cmd_simulate(const std::string& ckpt, const std::string& vocab_path, const std::string& config,
                  const std::string& cohort, const std::string& spec_path, const std::string& catalog_path,
                  const std::string& out, const std::string& participants_out, const std::string& plot_path,
                  std::uint64_t seed, int workers) {
  require_file(cohort);
  require_file(spec_path);
  const auto l = load_model(ckpt, vocab_path, config);
  std::optional<InterventionCatalog> catalog;
  if (!catalog_path.empty()) catalog = InterventionCatalog::load(catalog_path);
  nlohmann::json spec;
  try {
    spec = nlohmann::json::parse(read_text(spec_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("malformed JSON in '{}': {}", spec_path, e.what()));
  }
  if (!spec.contains("arms") || !spec["arms"].is_array() || spec["arms"].empty() || spec["arms"].size() > 2) {
    throw Error(fmt::format("'{}': 'arms' must list 1 or 2 interventions", spec_path));
  }
  if (!spec.contains("outcome") || !spec["outcome"].is_string()) {
    throw Error(fmt::format("'{}': missing field 'outcome'", spec_path));
  }
  std::vector<InterventionSpec> arms;
  for (const auto& a : spec["arms"]) {
    arms.push_back(parse_intervention(a.dump(), l.vocab, catalog ? &*catalog : nullptr));
    warn_frequency(arms.back());
  }
  const int outcome = l.vocab.index_of(spec["outcome"].get<std::string>());
  ArmOptions opt;
  opt.horizon_months = spec.value("horizon_months", 12.0);
  opt.seed = seed;
  opt.workers = workers;
  auto cohort_enc = encode_all(read_cohort(cohort), l.vocab, l.ckpt.model.config());
  if (spec.contains("eligibility")) {
    const auto& e = spec["eligibility"];
    std::optional<EligibilityRule> rule;
    if (e.is_string() && e.get<std::string>() == "default") {
      rule = default_rule(l.vocab.modality(outcome).name, l.vocab);
      if (!rule) throw Error(fmt::format("no default eligibility threshold for '{}'", l.vocab.modality(outcome).name));
    } else {
      EligibilityRule r;
      r.modality = l.vocab.index_of(e.at("modality").get<std::string>());
      const auto cmp = e.at("comparator").get<std::string>();
      if (cmp != ">=" && cmp != "<=") throw Error(fmt::format("eligibility comparator '{}' must be >= or <=", cmp));
      r.comparator = cmp == ">=" ? EligibilityRule::Comparator::kAtLeast : EligibilityRule::Comparator::kAtMost;
      r.threshold = e.at("threshold").get<double>();
      rule = r;
    }
    auto elig = filter_eligible(l.ckpt.model, cohort_enc, *rule, l.vocab, outcome, opt.horizon_months, workers);
    log(fmt::format("eligibility: {} kept, {} missing modality, {} failed baseline, {} failed prediction",
                    elig.eligible.size(), elig.missing_modality, elig.failed_baseline, elig.failed_prediction));
    if (elig.eligible.empty()) throw Error("no participant passed the eligibility filter");
    cohort_enc = std::move(elig.eligible);
  }
  std::vector<ArmResult> results;
  if (arms.size() == 1) {
    results.push_back(simulate_arms(l.ckpt.model, cohort_enc, arms[0], l.vocab, outcome, opt));
  } else {
    auto four = four_arm(l.ckpt.model, cohort_enc, arms[0], arms[1], l.vocab, outcome, opt);
    log(fmt::format("four-arm interaction (A+B minus A minus B): {:.3f} percentage points", four.interaction));
    results = {four.a, four.b, four.ab};
  }
  std::string csv = fmt::format("# library_version={} seed={} config_hash={} vocab_fingerprint={} bootstrap_seed={}\n",
                                l.meta.library_version, l.meta.seed, l.meta.config_hash, l.meta.vocab_fingerprint, seed);
  csv += fmt::format("# outcome={} horizon_months={}\n", l.vocab.modality(outcome).name, opt.horizon_months);
  csv += "arm,n,mean_control,mean_treatment,mean_delta,effect_percent,signed_percent,ci_low,ci_high\n";
  for (const auto& a : results) {
    csv += fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", a.label, a.ids.size(), a.mean_control,
                       a.mean_treatment, a.mean_delta, a.effect_percent, a.signed_percent, a.ci_low, a.ci_high);
    log(fmt::format("{}: n={} effect {:+.2f}% [{:.2f}, {:.2f}]", a.label, a.ids.size(), a.signed_percent, a.ci_low, a.ci_high));
  }
  if (const int months = spec.value("trajectory_months", 0); months > 0) {
    const auto traj = trajectory(l.ckpt.model, cohort_enc, arms[0], l.vocab, outcome, months, workers);
    csv += "# trajectory\nmonth,mean_delta,sem\n";
    plot::Series s{arms[0].label, {}, {}, {}};
    for (const auto& p : traj) {
      csv += fmt::format("{},{:.9g},{:.9g}\n", p.month, p.mean_delta, p.sem);
      s.x.push_back(p.month);
      s.y.push_back(p.mean_delta);
      s.err.push_back(p.sem);
    }
    if (!plot_path.empty()) {
      write_text(plot_path, plot::lines(std::span(&s, 1), fmt::format("{} trajectory", l.vocab.modality(outcome).name),
                                        "month", "mean delta"));
    }
  } else if (!plot_path.empty()) {
    std::vector<plot::ForestRow> rows;
    for (const auto& a : results) rows.push_back({a.label, a.signed_percent, a.ci_low, a.ci_high});
    write_text(plot_path, plot::forest(rows, "simulated effects", "effect (%)"));
  }
  write_text(out, csv);
  if (!participants_out.empty()) write_text(participants_out, arm_to_csv(results.back(), l.meta));
  log(fmt::format("report -> {}", out));
}

void cmd_trial_run(const std::string& ckpt, const std::string& vocab_path, const std::string& config,
                   const std::string& trials_dir, const std::string& catalog_path, const std::string& out,
                   const std::string& plot_path, std::uint64_t seed, int workers) {
  if (!fs::is_directory(trials_dir)) throw Error(fmt::format("missing file '{}' (trials directory)", trials_dir));
  const auto l = load_model(ckpt, vocab_path, config);
  std::optional<InterventionCatalog> catalog;
  if (!catalog_path.empty()) catalog = InterventionCatalog::load(catalog_path);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(trials_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(fmt::format("no trial specs (*.json) in '{}'", trials_dir));
  // Validate every spec before running any.
  std::vector<TrialSpec> specs;
  for (const auto& f : files) specs.push_back(TrialSpec::load(f));
  std::vector<TrialResult> results;
  for (const auto& s : specs) {
    results.push_back(run_trial(l.ckpt.model, l.vocab, s, seed, catalog ? &*catalog : nullptr, workers));
    const auto& r = results.back();
    log(fmt::format("{}: predicted {:+.2f}% [{:.2f}, {:.2f}] vs published {:+.2f}% [{:.2f}, {:.2f}] direction={} ci={}",
                    r.name, r.primary.signed_percent, r.primary.ci_low, r.primary.ci_high, s.published.point,
                    s.published.ci_low, s.published.ci_high, r.score.direction_hit ? "hit" : "miss",
                    r.score.ci_hit ? "hit" : "miss"));
  }
  write_text(out, trials_to_csv(results, l.meta));
  if (!plot_path.empty()) {
    std::vector<plot::ForestRow> rows;
    for (const auto& r : results) {
      rows.push_back({r.name, r.primary.signed_percent, r.primary.ci_low, r.primary.ci_high, true,
                      r.score.published.point, r.score.published.ci_low, r.score.published.ci_high});
    }
    write_text(plot_path, plot::forest(rows, "predicted (blue) vs published (red)", "effect (%)"));
  }
  log(fmt::format("{} trials -> {}", results.size(), out));
}

void cmd_synth(std::uint64_t seed, int n, const std::string& out, const std::string& truth) {
  auto cfg = GeneratorConfig::desk_default(seed);
  cfg.n_participants = n;
  const auto g = generate(cfg);
  write_cohort(out, g.records);
  const fs::path truth_path = truth.empty() ? fs::path(out).replace_extension(".truth.json") : fs::path(truth);
  write_text(truth_path, g.truth.to_json());
  log(fmt::format("synthetic cohort: {} participants, seed {} -> {} (ground truth {})", n, seed, out, truth_path.string()));
}

void cmd_inspect(const std::string& ckpt) {
  const auto l = load_checkpoint(ckpt);
  fmt::print("format: TRAJLM01\nlibrary_version: {}\nseed: {}\nconfig_hash: {}\nvocab_fingerprint: {}\n",
             l.meta.library_version, l.meta.seed, l.meta.config_hash, hex64(l.meta.vocab_fingerprint));
  for (const auto& [k, v] : l.meta.extra) {
    if (k != "train_config") fmt::print("{}: {}\n", k, v);
  }
  fmt::print("model: {}\n", l.model.config().to_json());
  fmt::print("parameters:\n");
  std::size_t total = 0;
  for (const auto& [name, shape] : l.manifest) {
    std::size_t count = 1;
    std::string dims;
    for (auto d : shape) {
      count *= d;
      dims += (dims.empty() ? "" : "x") + std::to_string(d);
    }
    total += count;
    fmt::print("  {:<32} {:>12} {:>10}\n", name, dims, count);
  }
  fmt::print("total parameters: {}\n", total);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajlm: tokenized health-trajectory language model toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string cohort, vocab, out, config, ckpt, report, json_out, plot_dir, catalog, train_cohort;
  std::string baselines = "locf,linear";
  std::vector<std::string> bins;
  int workers = 1;
  int max_len = 512;
  std::uint64_t seed = 7;
  int n = 500;

  auto* bv = app.add_subcommand("build-vocab", "fit quantile bins and categories from a cohort");
  bv->add_option("--cohort", cohort, "cohort JSONL")->required();
  bv->add_option("--out", out, "vocabulary JSON to write")->required();
  bv->add_option("--bins", bins, "per-modality bin count override, modality=K");

  auto* tk = app.add_subcommand("tokenize", "encode a cohort into token sequences (JSONL)");
  tk->add_option("--cohort", cohort)->required();
  tk->add_option("--vocab", vocab)->required()->check(CLI::ExistingFile);
  tk->add_option("--out", out)->required();
  tk->add_option("--max-len", max_len, "maximum sequence length")->check(CLI::NonNegativeNumber);

  std::string metrics;
  auto* tr = app.add_subcommand("train", "train a model; writes a checkpoint");
  tr->add_option("--cohort", cohort)->required();
  tr->add_option("--vocab", vocab)->required()->check(CLI::ExistingFile);
  tr->add_option("--config", config, "key=value training config")->required();
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--metrics", metrics, "per-step metrics CSV");
  tr->add_option("--workers", workers, "threads for per-sequence gradients")->check(CLI::PositiveNumber);

  auto add_model_opts = [&](CLI::App* c) {
    c->add_option("--ckpt", ckpt, "checkpoint")->required();
    c->add_option("--vocab", vocab, "vocabulary the checkpoint was trained with")->required()->check(CLI::ExistingFile);
    c->add_option("--config", config, "training config; its hash must match the checkpoint");
  };

  auto* en = app.add_subcommand("eval-ntp", "within-visit next-token evaluation");
  add_model_opts(en);
  en->add_option("--cohort", cohort)->required();
  en->add_option("--report", report, "CSV report")->required();
  en->add_option("--json", json_out, "JSON summary");
  en->add_option("--plot", plot_dir, "directory for SVG scatter plots");
  en->add_option("--workers", workers)->check(CLI::PositiveNumber);

  auto* el = app.add_subcommand("eval-longitudinal", "visit-1 to visit-2 forecasting with baselines");
  add_model_opts(el);
  el->add_option("--cohort", cohort)->required();
  el->add_option("--train-cohort", train_cohort, "baseline training cohort (default: the training split of --cohort)");
  el->add_option("--baselines", baselines, "comma list of locf,linear");
  el->add_option("--report", report)->required();
  el->add_option("--json", json_out);
  el->add_option("--plot", plot_dir, "directory for SVG scatter plots");
  el->add_option("--workers", workers)->check(CLI::PositiveNumber);

  std::string m_in, m_out, probe_time, sex = "unknown";
  double age = 50.0;
  auto* pc = app.add_subcommand("probe-crossmodal", "two-position conditional probe E[out | in bin]");
  add_model_opts(pc);
  pc->add_option("--in", m_in, "input modality")->required();
  pc->add_option("--out-modality", m_out, "output modality")->required();
  pc->add_option("--time", probe_time, "fixed probe datetime (ISO)");
  pc->add_option("--age", age);
  pc->add_option("--sex", sex);
  pc->add_option("--report", report)->required();
  pc->add_option("--plot", plot_dir, "SVG curve path");

  std::string spec, participants;
  auto* sm = app.add_subcommand("simulate", "paired control/treatment intervention simulation");
  add_model_opts(sm);
  sm->add_option("--cohort", cohort)->required();
  sm->add_option("--spec", spec, "simulation spec JSON")->required();
  sm->add_option("--catalog", catalog, "intervention catalog JSON");
  sm->add_option("--out", out)->required();
  sm->add_option("--participants", participants, "per-participant CSV of the last arm");
  sm->add_option("--plot", plot_dir, "SVG path (trajectory or forest)");
  sm->add_option("--seed", seed, "bootstrap seed");
  sm->add_option("--workers", workers)->check(CLI::PositiveNumber);

  std::string trials;
  auto* tt = app.add_subcommand("trial-run", "synthetic trial populations scored against published effects");
  add_model_opts(tt);
  tt->add_option("--trials", trials, "directory of trial spec JSON files")->required();
  tt->add_option("--catalog", catalog);
  tt->add_option("--out", out, "forest CSV")->required();
  tt->add_option("--plot", plot_dir, "forest SVG path");
  tt->add_option("--seed", seed, "population and bootstrap seed");
  tt->add_option("--workers", workers)->check(CLI::PositiveNumber);

  std::string truth;
  auto* sy = app.add_subcommand("synth", "generate the planted synthetic cohort");
  sy->add_option("--seed", seed);
  sy->add_option("--n", n, "participants")->check(CLI::PositiveNumber);
  sy->add_option("--out", out, "cohort JSONL")->required();
  sy->add_option("--truth", truth, "ground-truth JSON (default: <out>.truth.json)");

  auto* ic = app.add_subcommand("inspect-checkpoint", "print the parameter manifest");
  ic->add_option("--ckpt", ckpt)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (bv->parsed()) {
      cmd_build_vocab(cohort, out, bins);
    } else if (tk->parsed()) {
      cmd_tokenize(cohort, vocab, out, max_len);
    } else if (tr->parsed()) {
      cmd_train(cohort, vocab, config, out, metrics, workers);
    } else if (en->parsed()) {
      cmd_eval_ntp(ckpt, vocab, config, cohort, report, json_out, plot_dir, workers);
    } else if (el->parsed()) {
      cmd_eval_longitudinal(ckpt, vocab, config, cohort, train_cohort, baselines, report, json_out, plot_dir, workers);
    } else if (pc->parsed()) {
      cmd_probe(ckpt, vocab, config, m_in, m_out, probe_time, age, sex, report, plot_dir);
    } else if (sm->parsed()) {
      if (const auto s = env_seed(); s && sm->count("--seed") == 0) seed = *s;
      cmd_simulate(ckpt, vocab, config, cohort, spec, catalog, out, participants, plot_dir, seed, workers);
    } else if (tt->parsed()) {
      if (const auto s = env_seed(); s && tt->count("--seed") == 0) seed = *s;
      cmd_trial_run(ckpt, vocab, config, trials, catalog, out, plot_dir, seed, workers);
    } else if (sy->parsed()) {
      if (const auto s = env_seed(); s && sy->count("--seed") == 0) seed = *s;
      cmd_synth(seed, n, out, truth);
    } else if (ic->parsed()) {
      cmd_inspect(ckpt);
    }
  } catch (const std::exception& e) {
    log(fmt::format("error: {}", e.what()));
    return 1;
  }
  return 0;
}
