// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "support/naive.hpp"
#include "tate/cli.hpp"

namespace fs = std::filesystem;
using namespace tate;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct CliResult {
  int code = 0;
  std::string out, err;

  nlohmann::json summary() const {
    std::istringstream lines(out);
    std::string line, last;
    while (std::getline(lines, line))
      if (!line.empty()) last = line;
    return nlohmann::json::parse(last);
  }
};

CliResult tate_run(std::vector<std::string> args) {
  args.insert(args.begin(), "tate");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream oss;
  oss.precision(precision);
  oss << v;
  return oss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The synthetic benchmark shared by criteria 5-7.
struct Benchmark {
  Dataset train, test;
  ModelConfig model;
};

Benchmark benchmark() {
  SynthSpec spec;
  spec.classes = 3;
  spec.per_class = 200;
  spec.separation = 5.0;
  spec.noise = 1.0;
  spec.seed = 7;
  const Dataset ds = synth_generate(spec);
  auto [train, test] = split_dataset(ds, 0.3, 7);
  ModelConfig mc;
  mc.hidden = 64;  // lr 1e-3 is unstable at the default width of 300 on this data
  return {std::move(train), std::move(test), configure_for(ds, mc)};
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle(const fs::path&) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = tate_run({"gradcheck", "--hidden", "16", "--heads", "2", "--samples", "2", "--classes", "3", "--dropout", "0"});
  const double elapsed = seconds_since(t0);
  const auto j = r.summary();
  bool all_below = !j["groups"].empty();
  for (const auto& [group, err] : j["groups"].items()) all_below = all_below && err.get<double>() < 1e-4;
  return {r.code == 0 && all_below && elapsed < 60.0,
          "max rel error " + fmt(j["max_rel_error"].get<double>(), 3) + " over " + std::to_string(j["groups"].size()) +
              " groups in " + fmt(elapsed, 3) + " s"};
}

Outcome forward_oracles(const fs::path&) {
  double worst[4] = {0, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ModelConfig c;
    c.hidden = 12;
    c.heads = 3;
    c.dropout = 0.0;
    c.input_widths = {5, 3, 4};
    Model m = make_model(c, seed);
    std::mt19937_64 rng(seed * 7919 + 1);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (const auto& p : m.params.all()) {
      if (p->name.ends_with(".b1") || p->name.ends_with(".b2")) {
        for (double& v : p->value.storage()) v = u(rng);
      }
    }
    Segment s;
    std::uniform_int_distribution<std::size_t> len(1, 7);
    for (Modality mod : kModalities) {
      Tensor t({len(rng), c.input_widths[index_of(mod)]});
      for (double& v : t.storage()) v = u(rng);
      s[mod] = t;
    }
    s = mask_missing(s, all_valid_patterns()[seed % 7]);

    // Multi-head attention over a multi-step sequence.
    Tensor x({5, c.hidden});
    for (double& v : x.storage()) v = u(rng);
    const auto w = find_attention(m.params, "attn.acoustic", c.hidden, c.heads);
    worst[0] = std::max(worst[0], naive::max_abs_diff(naive::attention(m, "attn.acoustic", naive::from(x), c.heads),
                                                      multi_head_attention(constant(x), constant(x), constant(x), w)->value));
    // Common-space projection, encoder and decoder through the full student pass.
    const auto got = student_forward(m, s);
    const auto want = naive::forward(m, s);
    worst[1] = std::max(worst[1], naive::max_abs_diff(want.joint, got.joint->value));
    worst[2] = std::max(worst[2], naive::max_abs_diff(want.encoded, got.encoded->value));
    worst[3] = std::max(worst[3], naive::max_abs_diff(want.decoded, got.decoded->value));
  }
  const bool pass = worst[0] <= 1e-10 && worst[1] <= 1e-10 && worst[2] <= 1e-10 && worst[3] <= 1e-10;
  return {pass, "100 seeds, max abs error attention " + fmt(worst[0], 3) + ", common space " + fmt(worst[1], 3) +
                    ", encoder " + fmt(worst[2], 3) + ", decoder " + fmt(worst[3], 3)};
}

Outcome tag_fidelity(const fs::path&) {
  const bool acoustic = encode_tag({Modality::acoustic}).to_string() == "0010";
  const bool pair = encode_tag({Modality::visual, Modality::acoustic}).to_string() == "0110";
  std::size_t round_trips = 0;
  for (const auto& p : all_valid_patterns()) round_trips += decode_tag(encode_tag(p).as_doubles()) == p ? 1 : 0;
  return {acoustic && pair && round_trips == 7,
          std::string("{acoustic}->") + encode_tag({Modality::acoustic}).to_string() + ", {visual,acoustic}->" +
              encode_tag({Modality::visual, Modality::acoustic}).to_string() + ", " + std::to_string(round_trips) +
              "/7 patterns round-trip"};
}

Outcome loss_identities(const fs::path&) {
  Var p = constant(Tensor::row({0.1, 0.6, 0.3}));
  const double kl_self = kl_divergence(p, p)->value.item();
  double asym = 0.0;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    Tensor a({1, 20}), b({1, 20});
    for (double& v : a.storage()) v = n(rng);
    for (double& v : b.storage()) v = n(rng);
    asym = std::max(asym, std::abs(js_divergence(constant(a), constant(b))->value.item() -
                                   js_divergence(constant(b), constant(a))->value.item()));
  }
  const double ce = cls_loss({constant(Tensor::row({1.0 / 3, 1.0 / 3, 1.0 / 3}))}, {0})->value.item();
  const double total = total_loss(1.0, 2.0, 3.0, 4.0, LossWeights{0.1, 0.1, 0.1});
  const bool pass = std::abs(kl_self) <= 1e-9 && asym <= 1e-12 && std::abs(ce - std::log(3.0)) <= 1e-9 && total == 1.9;
  return {pass, "KL(p,p)=" + fmt(kl_self, 3) + ", max |JS(a,b)-JS(b,a)|=" + fmt(asym, 3) + ", CE-ln3=" +
                    fmt(ce - std::log(3.0), 3) + ", total=" + fmt(total, 17)};
}

struct Criterion5State {
  std::optional<Model> model;
};

Outcome end_to_end(const Benchmark& b, Criterion5State& state) {
  TrainConfig tc;  // defaults: lr 1e-3, batch 32, 20 epochs, lambdas 0.1
  tc.eta = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  const Teacher teacher = pretrain_teacher(b.train, b.model, tc).teacher;
  auto result = train(b.train, &teacher, b.model, tc);
  const double elapsed = seconds_since(t0);
  const double acc = evaluate(result.model, b.test, 0.0, MissingMode::single, 1).accuracy;

  // Chance level: a single random initialisation is one draw from a wide
  // distribution, so average over 20 initialisations.
  double untrained = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    untrained += evaluate(make_model(b.model, seed), b.test, 0.0, MissingMode::single, 1).accuracy / 20.0;
  }
  const double one_init = evaluate(make_model(b.model, tc.seed), b.test, 0.0, MissingMode::single, 1).accuracy;
  state.model = std::move(result.model);
  const bool pass = acc >= 0.90 && result.history.epochs.size() <= 20 && elapsed < 600.0 &&
                    std::abs(untrained - 1.0 / 3.0) <= 0.05;
  return {pass, "held-out acc " + fmt(acc) + " after " + std::to_string(result.history.epochs.size()) + " epochs in " +
                    fmt(elapsed, 3) + " s; untrained mean over 20 inits " + fmt(untrained) + " (seed " +
                    std::to_string(tc.seed) + " alone " + fmt(one_init) + ")"};
}

Outcome degradation(const Benchmark& b, const Criterion5State& state) {
  if (!state.model) return {false, "no checkpoint from the end-to-end run"};
  const std::vector<double> etas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> single, multiple;
  for (double eta : etas) {
    single.push_back(evaluate(*state.model, b.test, eta, MissingMode::single, 11).accuracy);
    multiple.push_back(evaluate(*state.model, b.test, eta, MissingMode::multiple, 11).accuracy);
  }
  bool pass = true;
  for (std::size_t i = 1; i < etas.size(); ++i) {
    pass = pass && single[i] <= single[i - 1] + 0.02 && multiple[i] <= multiple[i - 1] + 0.02;
    pass = pass && multiple[i] <= single[i] + 0.02;
  }
  std::string detail = "single";
  for (double a : single) detail += " " + fmt(a, 3);
  detail += " | multiple";
  for (double a : multiple) detail += " " + fmt(a, 3);
  return {pass, detail};
}

Outcome ablations(const Benchmark& b, const fs::path& dir) {
  // Part one: each ablation is a pure configuration change, visible in the
  // parameter count and the history schema.
  const std::string data = (dir / "ablation.jsonl").string();
  if (tate_run({"synth", "--per-class", "4", "--out", data}).code != 0) return {false, "synth failed"};
  const std::vector<std::string> common{"train", "--data", data, "--pretrain", "--epochs", "1", "--hidden", "16",
                                        "--heads", "2"};
  struct Row {
    std::string name;
    std::vector<std::string> flags;
    nlohmann::json summary;
  };
  std::vector<Row> rows{{"full", {}, {}},
                        {"-w/o tag", {"--no-tag"}, {}},
                        {"-w/o tag loss", {"--lambda3", "0"}, {}},
                        {"-w/o forward loss", {"--lambda1", "0"}, {}},
                        {"-w/o backward loss", {"--lambda2", "0"}, {}},
                        {"-w/o common space", {"--no-common-space"}, {}}};
  for (auto& row : rows) {
    auto args = common;
    args.push_back("--out");
    args.push_back((dir / "ablation_model.json").string());
    args.insert(args.end(), row.flags.begin(), row.flags.end());
    auto r = tate_run(args);
    if (r.code != 0) return {false, row.name + " failed: " + r.err};
    row.summary = r.summary();
  }
  auto params = [&](std::size_t i) { return rows[i].summary["parameters"].get<std::size_t>(); };
  auto has_column = [&](std::size_t i, const std::string& c) {
    for (const auto& col : rows[i].summary["history_columns"])
      if (col == c) return true;
    return false;
  };
  const bool schema = params(1) < params(0) && !has_column(1, "tag") && params(2) == params(0) &&
                      !has_column(2, "tag") && has_column(2, "forward") && params(3) == params(0) &&
                      !has_column(3, "forward") && params(4) == params(0) && !has_column(4, "backward") &&
                      has_column(4, "tag") && params(5) < params(0) && has_column(5, "tag") &&
                      has_column(0, "forward") && has_column(0, "backward") && has_column(0, "tag");

  // Part two: dropping the forward loss hurts at eta = 0.4. Averaged over five
  // training seeds because the gap is small next to seed-to-seed variation.
  double full_acc = 0.0, ablated_acc = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig tc;
    tc.eta = 0.4;
    tc.mode = MissingMode::single;
    tc.seed = seed;
    const Teacher teacher = pretrain_teacher(b.train, b.model, tc).teacher;
    const double f = evaluate(train(b.train, &teacher, b.model, tc).model, b.test, 0.4, MissingMode::single, 11).accuracy;
    tc.weights.forward = 0.0;
    const double a = evaluate(train(b.train, nullptr, b.model, tc).model, b.test, 0.4, MissingMode::single, 11).accuracy;
    full_acc += f / 5.0;
    ablated_acc += a / 5.0;
    per_seed += " " + fmt(f, 3) + "/" + fmt(a, 3);
  }
  std::string detail = "params";
  for (std::size_t i = 0; i < rows.size(); ++i) detail += " " + std::to_string(params(i));
  detail += std::string("; schema ") + (schema ? "ok" : "MISMATCH") + "; eta 0.4 acc full " + fmt(full_acc) +
            " vs -w/o forward loss " + fmt(ablated_acc) + " (per seed" + per_seed + ")";
  return {schema && ablated_acc < full_acc, detail};
}

Outcome determinism(const fs::path& dir) {
  const std::string data = (dir / "det.jsonl").string();
  if (tate_run({"synth", "--per-class", "8", "--seed", "3", "--out", data}).code != 0) return {false, "synth failed"};
  std::vector<std::string> artefacts[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path d = dir / ("det" + std::to_string(run));
    fs::create_directories(d);
    auto t = tate_run({"train", "--data", data, "--pretrain", "--teacher-out", (d / "teacher.json").string(), "--out",
                       (d / "model.json").string(), "--history", (d / "history.csv").string(), "--epochs", "3",
                       "--hidden", "16", "--heads", "2", "--eta", "0.3", "--mode", "multiple", "--seed", "5"});
    auto e = tate_run({"eval", "--checkpoint", (d / "model.json").string(), "--data", data, "--out",
                       (d / "eval.csv").string(), "--seed", "5"});
    if (t.code != 0 || e.code != 0) return {false, "run failed: " + t.err + e.err};
    for (const char* f : {"teacher.json", "model.json", "history.csv", "eval.csv"}) artefacts[run].push_back(slurp(d / f));
    artefacts[run].push_back(e.summary().dump());
  }
  const bool same = artefacts[0] == artefacts[1];
  return {same, same ? "teacher, checkpoint, history, eval table and JSON summary byte-identical"
                     : "outputs differ between identical runs"};
}

Outcome metric_correctness(const fs::path& dir) {
  const std::string fixture = std::string(TATE_FIXTURE_DIR) + "/metrics30.jsonl";
  const Dataset ds = load_jsonl(fixture);
  if (ds.size() != 30) return {false, "fixture holds " + std::to_string(ds.size()) + " samples"};
  // Three output classes while the fixture only uses two, so one class has zero support.
  ModelConfig mc;
  mc.hidden = 8;
  mc.heads = 2;
  mc = configure_for(ds, mc);
  mc.classes = 3;
  const std::string ckpt = (dir / "metrics_model.json").string();
  save_model(ckpt, make_model(mc, 4));
  auto r = tate_run({"eval", "--checkpoint", ckpt, "--data", fixture, "--etas", "0,0.5"});
  if (r.code != 0) return {false, "eval failed: " + r.err};

  const auto rows = r.summary()["rows"];
  bool pass = rows.size() == 2;
  std::string detail;
  for (const auto& row : rows) {
    const auto cm = row["confusion"].get<std::vector<std::vector<std::size_t>>>();
    // Recomputed by hand from the confusion matrix.
    std::size_t total = 0, diag = 0;
    for (std::size_t i = 0; i < cm.size(); ++i)
      for (std::size_t j = 0; j < cm.size(); ++j) {
        total += cm[i][j];
        if (i == j) diag += cm[i][j];
      }
    const double acc = static_cast<double>(diag) / static_cast<double>(total);
    double f1_sum = 0.0;
    bool zero_support_seen = false;
    for (std::size_t c = 0; c < cm.size(); ++c) {
      std::size_t predicted = 0, actual = 0;
      for (std::size_t k = 0; k < cm.size(); ++k) {
        predicted += cm[k][c];
        actual += cm[c][k];
      }
      const double precision = predicted ? static_cast<double>(cm[c][c]) / static_cast<double>(predicted) : 0.0;
      const double recall = actual ? static_cast<double>(cm[c][c]) / static_cast<double>(actual) : 0.0;
      const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
      if (actual == 0) {
        zero_support_seen = true;
        pass = pass && row["per_class_f1"][c].get<double>() == 0.0;
      }
      f1_sum += f1;
    }
    const double macro = f1_sum / static_cast<double>(cm.size());
    pass = pass && total == 30 && zero_support_seen && acc == row["accuracy"].get<double>() &&
           macro == row["macro_f1"].get<double>();
    detail += "eta " + fmt(row["eta"].get<double>(), 2) + ": ACC " + fmt(acc) + " M-F1 " + fmt(macro) + "; ";
  }
  return {pass, detail + "zero-support class F1 = 0"};
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / "tate_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const Benchmark bench = benchmark();
  Criterion5State state;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 gradient oracle", [&] { return gradient_oracle(dir); }},
      {"2 forward oracles", [&] { return forward_oracles(dir); }},
      {"3 tag fidelity", [&] { return tag_fidelity(dir); }},
      {"4 loss identities", [&] { return loss_identities(dir); }},
      {"5 end-to-end learning", [&] { return end_to_end(bench, state); }},
      {"6 degradation trend", [&] { return degradation(bench, state); }},
      {"7 ablation machinery", [&] { return ablations(bench, dir); }},
      {"8 determinism", [&] { return determinism(dir); }},
      {"9 metric correctness", [&] { return metric_correctness(dir); }},
  };

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << "criterion " << name << ": " << o.detail << std::endl;
  }
  fs::remove_all(dir);
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
