// Acceptance suite: one PASS/FAIL line per criterion. Exit status is
// nonzero when any selected criterion fails.

#include "mshot/experiment.hpp"
#include "mshot/io.hpp"

#include "CLI11.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace mshot;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

fs::path config_path(const std::string& name) { return fs::path(MSHOT_SOURCE_DIR) / "configs" / name; }

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-8);
}

template <typename S>
Mat<S> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat<S> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(scale * (2 * uniform01(rng) - 1));
  return m;
}

/// Largest relative error between analytic gradients and central differences.
template <typename P>
double param_grad_error(P& p, P& analytic, const std::function<double(P&)>& loss, double h = 1e-5) {
  auto refs = refs_of(p);
  auto grads = refs_of(analytic);
  double worst = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    auto& m = *refs.mats[k];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double old = m.data()[i];
      m.data()[i] = old + h;
      const double lp = loss(p);
      m.data()[i] = old - h;
      const double lm = loss(p);
      m.data()[i] = old;
      worst = std::max(worst, rel_err((lp - lm) / (2 * h), grads.mats[k]->data()[i]));
    }
  }
  return worst;
}

double matrix_grad_error(Mat<double> x, const Mat<double>& analytic,
                         const std::function<double(const Mat<double>&)>& loss, double h = 1e-5) {
  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double old = x.data()[i];
    x.data()[i] = old + h;
    const double lp = loss(x);
    x.data()[i] = old - h;
    const double lm = loss(x);
    x.data()[i] = old;
    worst = std::max(worst, rel_err((lp - lm) / (2 * h), analytic.data()[i]));
  }
  return worst;
}

// ---------------------------------------------------------------------------

Outcome criterion_oracles() {
  const auto t0 = Clock::now();
  double worst = 0;
  long pairs = 0;
  for (int M = 1; M <= 7; ++M) {
    const auto all = oracle::set_partitions(M);
    for (const auto& a : all)
      for (const auto& b : all) {
        worst = std::max(worst, std::abs(seg_accuracy(a, b) - oracle::matched_accuracy(a, b)));
        worst = std::max(worst, std::abs(nmi(a, b) - oracle::entropy_nmi(a, b)));
        if (M >= 2) worst = std::max(worst, std::abs(ari(a, b) - oracle::pair_count_ari(a, b)));
        ++pairs;
      }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 60,
          std::to_string(pairs) + " labeling pairs, max |diff| " + fmt("%.2e", worst) + ", " +
              fmt("%.1f", secs) + " s"};
}

Outcome criterion_partitions() {
  const auto t0 = Clock::now();
  long cases = 0, bad = 0;
  for (int M = 1; M <= 10; ++M) {
    for (unsigned mask = 0; mask < (1u << (M - 1)); ++mask) {
      BoundaryVector b(M - 1);
      for (int i = 0; i < M - 1; ++i) b[i] = (mask >> i) & 1u;
      const SegmentPartition part = partition_from(b);
      const Labeling lab = labels_from(part);
      const bool ok = part.n_scans() == M && boundaries_of(part) == b && boundaries_of_labels(lab) == b &&
                      partition_from(boundaries_of_labels(lab)) == part && count_shots(b) == part.size() &&
                      static_cast<int>(std::set<int>(lab.begin(), lab.end()).size()) == part.size();
      bad += !ok;
      ++cases;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 60,
          std::to_string(cases) + " boundary vectors, " + std::to_string(bad) + " failures, " +
              fmt("%.2f", secs) + " s"};
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  const int c = 8, d = 8, M = 5, N = 4;
  Rng rng(2024);

  // boundary predictor
  SbpParams<double> sp(c, d);
  sp.init(rng);
  const Mat<double> x = random_mat<double>(M, c, rng);
  const BoundaryVector y{0, 1, 0, 1};
  SbpTrace<double> tr;
  const Vec<double> probs = sbp_forward(sp, x, &tr);
  SbpParams<double> sg = zeros_like(sp);
  sbp_backward(sp, tr, sbp_loss_grad_logits(probs, y), sg);
  const double e_sbp = param_grad_error<SbpParams<double>>(
      sp, sg, [&](SbpParams<double>& q) { return sbp_loss(sbp_forward(q, x), y); });

  // caption decoder
  const FactorSpace space;
  const Lexicon lex(space);
  DecoderConfig dc;
  dc.vocab = lex.vocab_size();
  dc.embed_dim = c;
  dc.token_dim = 8;
  dc.hidden = 8;
  DecoderParams<double> dp(dc);
  dp.init(rng);
  const Vec<double> emb = random_mat<double>(c, 1, rng);
  const auto tokens = lex.caption_of({2, 3, 1}).tokens;
  const auto instr = lex.instruction_tokens();
  DecoderParams<double> dg = zeros_like(dp);
  Vec<double> de = Vec<double>::Zero(c);
  caption_loss<double>(dp, emb, tokens, instr, &dg, &de);
  double e_cap = param_grad_error<DecoderParams<double>>(
      dp, dg, [&](DecoderParams<double>& q) { return caption_loss<double>(q, emb, tokens, instr); });
  e_cap = std::max(e_cap, matrix_grad_error(emb, de, [&](const Mat<double>& e) {
                     return caption_loss<double>(dp, Vec<double>(e), tokens, instr);
                   }));

  // alignment
  ContrastiveBatch<double> batch{random_mat<double>(N, c, rng), random_mat<double>(N, c, rng),
                                 random_mat<double>(N, c, rng)};
  const double lt = std::log(0.1);
  Mat<double> ds = Mat<double>::Zero(N, c);
  double dlt = 0;
  align_loss<double>(batch, lt, &ds, &dlt);
  double e_align = matrix_grad_error(batch.shot, ds, [&](const Mat<double>& s) {
    ContrastiveBatch<double> b2 = batch;
    b2.shot = s;
    return align_loss<double>(b2, lt);
  });
  e_align = std::max(e_align, rel_err((align_loss<double>(batch, lt + 1e-5) - align_loss<double>(batch, lt - 1e-5)) / 2e-5, dlt));

  // loss weights
  LossWeights<double> w;
  w.s << 0.4, -0.3, 0.9;
  const LossTerms terms{0.6, 2.2, 1.3, 0.8};
  const auto tg = total_loss_grad(terms, w);
  const double e_w = matrix_grad_error(w.s, tg.ds, [&](const Mat<double>& s) {
    LossWeights<double> q = w;
    q.s = s;
    return total_loss(terms, q);
  });

  const double worst = std::max({e_sbp, e_cap, e_align, e_w});
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60,
          "sbp " + fmt("%.1e", e_sbp) + ", caption " + fmt("%.1e", e_cap) + ", align " + fmt("%.1e", e_align) +
              ", weights " + fmt("%.1e", e_w) + ", " + fmt("%.1f", secs) + " s"};
}

double table_mean(const Json& table, const std::string& metric) {
  for (const auto& r : table)
    if (r.at("metric") == metric) return r.at("mean").get<double>();
  throw InvalidArgument("metric missing from report: " + metric);
}

Outcome criterion_sbp(const fs::path& work, std::ostream& log) {
  const auto t0 = Clock::now();
  ExperimentConfig c = load_config(config_path("cc2017-syn.json"));
  c.name = "sbp-only";
  c.losses = LossSwitches{true, false, false, false};
  c.out = work / "sbp-only";
  c.data = work / "sbp-only" / "data";
  c.resolve();
  c.validate();
  run_synth(c, log);
  run_train(c, std::nullopt, log);
  const Json report = run_eval(c, std::nullopt, log);
  const double secs = seconds_since(t0);
  const Json& t = report.at("table");
  const double acc = table_mean(t, "acc"), a = table_mean(t, "ari"), n = table_mean(t, "nmi");
  return {acc >= 0.90 && a >= 0.85 && n >= 0.85 && secs <= 600,
          "ACC " + fmt("%.3f", acc) + ", ARI " + fmt("%.3f", a) + ", NMI " + fmt("%.3f", n) + " on " +
              std::to_string(c.data_sizes.n_test) + " held-out samples, " + fmt("%.0f", secs) + " s"};
}

std::map<std::string, Json> ablation_tables(const Json& ablation) {
  std::map<std::string, Json> out;
  for (const auto& r : ablation.at("runs")) out[r.at("name").get<std::string>()] = r.at("table");
  return out;
}

Outcome criterion_segmentation(const fs::path& work, std::ostream& log) {
  const auto t0 = Clock::now();
  const AblationSpec spec = load_ablation(config_path("ablation-segmentation.json"));
  const auto tables = ablation_tables(run_ablation(spec, work / "ablation-segmentation", Json::object(), log));
  const double secs = seconds_since(t0);
  const double with = table_mean(tables.at("with-sbp"), "caption_sim");
  const double without = table_mean(tables.at("without-sbp"), "caption_sim");
  return {with - without >= 0.05 && secs <= 900,
          "caption_sim with " + fmt("%.3f", with) + " vs without " + fmt("%.3f", without) + " (+" +
              fmt("%.3f", with - without) + "), " + fmt("%.0f", secs) + " s"};
}

Outcome criterion_loss_grid(const fs::path& work, std::ostream& log) {
  const auto t0 = Clock::now();
  const AblationSpec spec = load_ablation(config_path("ablation-losses.json"));
  const auto tables = ablation_tables(run_ablation(spec, work / "ablation-losses", Json::object(), log));
  const double secs = seconds_since(t0);
  const double all = table_mean(tables.at("all"), "caption_sim");
  const double align = table_mean(tables.at("align"), "caption_sim");
  const double caption = table_mean(tables.at("caption"), "caption_sim");
  std::string detail = "caption_sim";
  for (const auto& run : spec.runs) detail += " " + run.name + "=" + fmt("%.3f", table_mean(tables.at(run.name), "caption_sim"));
  return {all >= align && all >= caption && secs <= 1800, detail + ", " + fmt("%.0f", secs) + " s"};
}

Outcome criterion_sanity() {
  const auto t0 = Clock::now();
  // n-way on unrelated embeddings: a fresh random query per trial
  Rng rng(99);
  NormalSampler normal(rng);
  MatF pool(64, 100);
  for (Eigen::Index i = 0; i < pool.size(); ++i) pool.data()[i] = static_cast<float>(normal());
  const int trials = 10000;
  double hits = 0;
  for (int t = 0; t < trials; ++t) {
    VecF q(64);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = static_cast<float>(normal());
    const int gt = static_cast<int>(uniform_index(rng, 100));
    hits += nway_topk(q, gt, pool, {2, 1, 1, derive_seed(7, static_cast<std::uint64_t>(t))});
  }
  const double acc = hits / trials;
  const double sigma = std::sqrt(0.25 / trials);
  const bool nway_ok = std::abs(acc - 0.5) <= 3 * sigma;

  double worst_ssim = 0;
  for (int k = 0; k < 100; ++k) {
    Frame f{MatF(32, 32)};
    for (Eigen::Index i = 0; i < f.pixels.size(); ++i) f.pixels.data()[i] = static_cast<float>(uniform01(rng));
    worst_ssim = std::max(worst_ssim, std::abs(ssim(f, f) - 1.0));
  }
  const bool ssim_ok = worst_ssim < 1e-12;

  int spread = 0;
  for (Protocol p : {Protocol::kCc2017Syn, Protocol::kWebVidSyn}) {
    const auto cfg = SynthConfig::defaults(p);
    const Lexicon lex(cfg.space);
    const auto clips = make_clip_pool(cfg, lex, 50, 1);
    for (int n : {1, 2, 100, 301, 1000}) {
      const auto m = synthesize(clips, n, cfg, "train", 4);
      const auto [lo, hi] = std::minmax_element(m.ratio_counts.begin(), m.ratio_counts.end());
      spread = std::max(spread, *hi - *lo);
    }
  }
  const bool ratio_ok = spread <= 1;
  return {nway_ok && ssim_ok && ratio_ok,
          "2-way chance " + fmt("%.4f", acc) + " (3 sigma " + fmt("%.4f", 3 * sigma) + "), max |ssim(x,x)-1| " +
              fmt("%.1e", worst_ssim) + ", ratio count spread " + std::to_string(spread) + ", " +
              fmt("%.1f", seconds_since(t0)) + " s"};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  return out;
}

Outcome criterion_determinism(const fs::path& work, std::ostream& log) {
  const auto t0 = Clock::now();
  std::vector<ExperimentConfig> runs;
  for (int k = 0; k < 2; ++k) {
    ExperimentConfig c = load_config(config_path("smoke.json"));
    c.out = work / "determinism" / (k == 0 ? "a" : "b");
    c.data = c.out / "data";
    c.threads = k + 1;
    c.resolve();
    fs::remove_all(c.out);
    run_synth(c, log);
    run_train(c, std::nullopt, log);
    run_eval(c, std::nullopt, log);
    cmd_report(c.out);
    runs.push_back(c);
  }
  std::vector<std::string> diffs;
  const auto da = tree_bytes(runs[0].data_dir()), db = tree_bytes(runs[1].data_dir());
  if (da != db) diffs.push_back("dataset");
  for (const char* f : {run_files::kCheckpoint, run_files::kReportText, run_files::kReportCsv})
    if (read_file(runs[0].out / f) != read_file(runs[1].out / f)) diffs.push_back(f);
  Json ra = Json::parse(read_file(runs[0].out / run_files::kReport));
  Json rb = Json::parse(read_file(runs[1].out / run_files::kReport));
  ra.erase("timings");
  rb.erase("timings");
  if (ra != rb) diffs.push_back(run_files::kReport);
  std::string detail = std::to_string(da.size()) + " dataset files, checkpoint, report json/txt/csv";
  detail += diffs.empty() ? " identical" : " differ:";
  for (const auto& d : diffs) detail += " " + d;
  return {diffs.empty(), detail + ", " + fmt("%.0f", seconds_since(t0)) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for datasets and runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  std::ofstream log(work / "acceptance.log");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence (M <= 7)", criterion_oracles},
      {"partition algebra (M <= 10)", criterion_partitions},
      {"gradient checks", criterion_gradients},
      {"boundary predictor learns mixing", [&] { return criterion_sbp(work, log); }},
      {"segmentation improves caption similarity", [&] { return criterion_segmentation(work, log); }},
      {"loss-grid ordering", [&] { return criterion_loss_grid(work, log); }},
      {"metric sanity", criterion_sanity},
      {"determinism", [&] { return criterion_determinism(work, log); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first
              << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
