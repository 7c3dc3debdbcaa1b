#include "doctest.h"
#include "test_support.hpp"

#include "mshot/experiment.hpp"
#include "mshot/io.hpp"

#include <sstream>

using namespace mshot;
namespace fs = std::filesystem;

namespace {

Json tiny(const fs::path& out) {
  Json j = Json::parse(R"({
    "name": "tiny",
    "protocol": "cc2017-syn",
    "seed": 5,
    "synth": {"pool_size": 80},
    "data": {"n_train": 24, "n_test": 6, "test_pool": 30},
    "model": {"encoder_hidden": 8, "hidden_d": 8, "token_dim": 8, "decoder_hidden": 8},
    "train": {"epochs": 2, "batch": 8, "diffusion_steps": 10, "diffusion_hidden": 8, "probe_size": 8},
    "eval": {"n_ways": [2, 5], "trials": 10}
  })");
  j["paths"] = {{"out", out.generic_string()}};
  return j;
}

Json strip_timings(Json r) {
  r.erase("timings");
  return r;
}

}  // namespace

TEST_CASE("config json round trip and validation") {
  const ExperimentConfig c = config_from_json(tiny("runs/x"));
  CHECK(c.name == "tiny");
  CHECK(c.data_sizes.n_train == 24);
  CHECK(c.train.epochs == 2);
  CHECK(c.model.vocab > 0);
  const ExperimentConfig again = config_from_json(config_to_json(c));
  CHECK(config_to_json(again) == config_to_json(c));
  CHECK(config_hash(again) == config_hash(c));

  Json bad = tiny("runs/x");
  bad["colour"] = 1;
  CHECK_THROWS_AS(config_from_json(bad), InvalidArgument);
  bad = tiny("runs/x");
  bad["train"]["learning_rate"] = 0.1;
  CHECK_THROWS_AS(config_from_json(bad), InvalidArgument);
  bad = tiny("runs/x");
  bad["train"]["epochs"] = "many";
  CHECK_THROWS_AS(config_from_json(bad), InvalidArgument);
  bad = tiny("runs/x");
  bad["train"]["lr"] = -1;
  CHECK_THROWS_AS(config_from_json(bad), InvalidArgument);

  // hashes: paths and threads are not part of the identity
  Json moved = tiny("elsewhere");
  moved["threads"] = 7;
  CHECK(config_hash(config_from_json(moved)) == config_hash(c));
  Json eval_only = tiny("runs/x");
  eval_only["eval"]["tau"] = 0.3;
  const auto e = config_from_json(eval_only);
  CHECK(config_hash(e) != config_hash(c));
  CHECK(train_hash(e) == train_hash(c));
  CHECK(data_hash(e) == data_hash(c));
  Json lr = tiny("runs/x");
  lr["train"]["lr"] = 0.01;
  CHECK(train_hash(config_from_json(lr)) != train_hash(c));
  CHECK(data_hash(config_from_json(lr)) == data_hash(c));

  // auto settings follow the loss switches
  Json no_sbp = tiny("runs/x");
  no_sbp["losses"] = {{"sbp", false}};
  ExperimentConfig ns = config_from_json(no_sbp);
  ns.resolve();
  CHECK(ns.segmentation == Segmentation::kNone);
  CHECK(segmentation_from_string(to_string(Segmentation::kOracle)) == Segmentation::kOracle);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"cc2017-syn.json", "webvid-syn.json", "smoke.json"})
    CHECK_NOTHROW(load_config(fs::path(MSHOT_SOURCE_DIR) / "configs" / name));
  for (const char* name : {"ablation-segmentation.json", "ablation-prompt.json", "ablation-losses.json"}) {
    const AblationSpec spec = load_ablation(fs::path(MSHOT_SOURCE_DIR) / "configs" / name);
    CHECK(spec.runs.size() >= 2);
    for (const auto& run : spec.runs) CHECK_NOTHROW(ablation_run_config(spec, run, "out", Json::object()));
  }
}

TEST_CASE("report hashing and rendering") {
  const ExperimentConfig c = config_from_json(tiny("runs/x"));
  EvalResult er;
  er.table.push_back({"caption_sim", {0.79, 0.03}, 10});
  er.table.push_back({"acc", {0.5, 0.125}, 10});
  const Json report = make_report(c, {}, &er, Json{{"train_seconds", 1.5}});
  CHECK_NOTHROW(verify_report(report));

  Json retimed = report;
  retimed["timings"]["train_seconds"] = 99.0;
  CHECK_NOTHROW(verify_report(retimed));
  CHECK(report_content_hash(retimed) == report_content_hash(report));

  Json tampered = report;
  tampered["table"][0]["mean"] = 0.9;
  CHECK_THROWS_AS(verify_report(tampered), FormatError);

  const RenderedReport a = render_report(report), b = render_report(report);
  CHECK(a.text == b.text);
  CHECK(a.csv == b.csv);
  CHECK(a.text.find("0.790±0.03") != std::string::npos);
  CHECK(a.csv.rfind("metric,mean,stderr,n\n", 0) == 0);
  CHECK(a.csv.find("caption_sim,") != std::string::npos);
}

TEST_CASE("ablation spec parsing") {
  const Json ok = Json::parse(R"({"name": "g", "base": {"seed": 2},
      "runs": [{"name": "a"}, {"name": "b", "override": {"losses": {"mse": false}}}],
      "metrics": ["caption_sim"]})");
  const AblationSpec spec = ablation_from_json(ok, ".");
  REQUIRE(spec.runs.size() == 2);
  const auto cb = ablation_run_config(spec, spec.runs[1], "out", Json{{"train", {{"epochs", 1}}}});
  CHECK_FALSE(cb.losses.mse);
  CHECK(cb.train.epochs == 1);
  CHECK(cb.seed == 2);
  CHECK(cb.out == fs::path("out") / "b");
  const auto ca = ablation_run_config(spec, spec.runs[0], "out", Json::object());
  CHECK(ca.data_dir() == cb.data_dir());

  Json dup = ok;
  dup["runs"][1]["name"] = "a";
  CHECK_THROWS_AS(ablation_from_json(dup, "."), InvalidArgument);
  Json unknown = ok;
  unknown["runs"][0]["overide"] = Json::object();
  CHECK_THROWS_AS(ablation_from_json(unknown, "."), InvalidArgument);
  Json escape = ok;
  escape["runs"][0]["name"] = "../x";
  CHECK_THROWS_AS(ablation_from_json(escape, "."), InvalidArgument);
}

TEST_CASE("tiny pipeline end to end") {
  const fs::path root = testing::scratch_dir("experiment_pipeline");
  std::ostringstream log;
  auto run = [&](const std::string& name) {
    ExperimentConfig c = config_from_json(tiny(root / name));
    c.resolve();
    run_synth(c, log);
    run_train(c, std::nullopt, log);
    run_eval(c, std::nullopt, log);
    cmd_report(c.out);
    return c;
  };
  const ExperimentConfig a = run("a");
  const ExperimentConfig b = run("b");
  for (const char* f : {"model.ckpt", "report.txt", "report.csv"})
    CHECK(read_file(a.out / f) == read_file(b.out / f));
  Json resolved_a = Json::parse(read_file(a.out / "config.resolved.json"));
  Json resolved_b = Json::parse(read_file(b.out / "config.resolved.json"));
  resolved_a.erase("paths");
  resolved_b.erase("paths");
  CHECK(resolved_a == resolved_b);
  const Json ra = Json::parse(read_file(a.out / "report.json"));
  const Json rb = Json::parse(read_file(b.out / "report.json"));
  CHECK(strip_timings(ra) == strip_timings(rb));
  CHECK(ra.at("config_hash") == config_hash(a));
  CHECK(read_file(a.data_dir() / "train" / "manifest.json") == read_file(b.data_dir() / "train" / "manifest.json"));

  SUBCASE("existing datasets are reused") {
    CHECK(run_synth(a, log).reused);
  }
  SUBCASE("missing data is a configuration error") {
    ExperimentConfig c = config_from_json(tiny(root / "nodata"));
    c.resolve();
    CHECK_THROWS_AS(run_train(c, std::nullopt, log), InvalidArgument);
  }
  SUBCASE("boundary-only training leaves the decoder at its initialization") {
    Json j = tiny(root / "sbp_only");
    j["losses"] = {{"caption", false}, {"align", false}, {"mse", false}};
    ExperimentConfig c = config_from_json(j);
    c.resolve();
    run_synth(c, log);
    const TrainState st = run_train(c, std::nullopt, log);
    Model init = make_model<float>(c.model, c.train.seed);
    Model trained = st.params;
    auto ri = refs_of(init.decoder), rt = refs_of(trained.decoder);
    for (std::size_t k = 0; k < ri.size(); ++k) CHECK(*ri.mats[k] == *rt.mats[k]);
  }
  SUBCASE("a corrupted report is detected") {
    std::string text = read_file(a.out / "report.json");
    const auto pos = text.find("\"caption_sim\"");
    REQUIRE(pos != std::string::npos);
    text.insert(pos + 1, "x");
    write_file(a.out / "report.json", text);
    CHECK_THROWS_AS(cmd_report(a.out), FormatError);
  }
}
