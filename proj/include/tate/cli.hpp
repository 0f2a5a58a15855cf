#pragma once

// Command-line front end. Kept in a header so the test suite can drive every
// subcommand in-process through run().

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tate/data/jsonl.hpp"
#include "tate/data/synth.hpp"
#include "tate/losses.hpp"
#include "tate/model/checkpoint.hpp"
#include "tate/numerics/gradcheck.hpp"
#include "tate/training/trainer.hpp"

namespace tate::cli {

enum ExitCode : int { kOk = 0, kError = 1, kUsage = 2, kNumeric = 3 };

// Raised for requests the tool declines to run; maps to exit code 2.
class Refusal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string env_name(const std::string& flag) {
  std::string s = "TATE_";
  for (char c : flag) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

/// Reads a flat key=value file. '#' starts a comment; values may be quoted.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Refusal(path + ":" + std::to_string(n) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw Refusal(path + ":" + std::to_string(n) + ": empty key");
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

/// Applies config-file entries to options that neither a flag nor an
/// environment variable has set. Unknown keys are fatal.
inline void apply_config_file(CLI::App& sub, const std::string& path) {
  for (const auto& [key, value] : read_config_file(path)) {
    if (key == "config") continue;
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw Refusal("unknown key '" + key + "' in config file '" + path + "'");
    if (opt->count() != 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

inline void print_effective_config(const CLI::App& sub, std::ostream& err) {
  std::istringstream lines(sub.config_to_str(true, false));
  err << "# tate " << sub.get_name() << " effective configuration\n";
  for (std::string line; std::getline(lines, line);) err << "#   " << line << '\n';
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

inline nlohmann::json summary(const std::string& command) { return {{"command", command}, {"status", "ok"}}; }

inline std::array<bool, 3> parse_modalities(const std::string& list) {
  std::array<bool, 3> on{false, false, false};
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    bool found = false;
    for (Modality m : kModalities) {
      if (item == name_of(m)) {
        on[index_of(m)] = true;
        found = true;
      }
    }
    if (!found) throw Refusal("unknown modality '" + item + "' (expected visual, acoustic, textual)");
  }
  return on;
}

inline void check_widths(const Dataset& ds, const ModelConfig& mc, const std::string& what) {
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    if (mc.modalities[i] && ds.widths[i] != mc.input_widths[i]) {
      throw ConfigError(std::string(name_of(m)) + " width " + std::to_string(ds.widths[i]) + " in the data does not match " +
                        std::to_string(mc.input_widths[i]) + " in the " + what);
    }
  }
}

// ---------------------------------------------------------------------------
// Option groups shared by several subcommands

struct ModelFlags {
  ModelConfig config;
  bool no_tag = false;
  bool no_common_space = false;
  std::string modalities = "visual,acoustic,textual";

  void attach(CLI::App& sub) {
    sub.add_option("--hidden", config.hidden, "Model width d")->capture_default_str();
    sub.add_option("--heads", config.heads, "Attention heads")->capture_default_str();
    sub.add_option("--dropout", config.dropout, "Dropout rate")->capture_default_str();
    sub.add_flag("--no-tag", no_tag, "Drop the missing-modality tag from the joint representation");
    sub.add_flag("--no-common-space", no_common_space, "Concatenate modality vectors without the common-space maps");
    sub.add_option("--modalities", modalities, "Comma-separated modalities to use")->capture_default_str();
  }

  ModelConfig resolve(const Dataset& ds) const {
    ModelConfig c = configure_for(ds, config);
    c.use_tag = !no_tag;
    c.use_common_space = !no_common_space;
    c.modalities = parse_modalities(modalities);
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig config;
  std::string mode = "single";
  std::string forward_kind = "js", backward_kind = "js", tag_kind = "mae";

  void attach_optimizer(CLI::App& sub) {
    sub.add_option("--lr", config.lr, "Adam learning rate")->capture_default_str();
    sub.add_option("--batch", config.batch, "Batch size")->capture_default_str();
    sub.add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
    sub.add_option("--seed", config.seed, "Seed for every random stream")->capture_default_str();
  }

  void attach_objective(CLI::App& sub) {
    const auto kinds = CLI::IsMember({"js", "mae", "cosine"});
    sub.add_option("--eta", config.eta, "Missing rate during training")->capture_default_str();
    sub.add_option("--mode", mode, "Missing mode: single or multiple")
        ->check(CLI::IsMember({"single", "multiple"}))
        ->capture_default_str();
    sub.add_option("--lambda1", config.weights.forward, "Forward differential loss weight")->capture_default_str();
    sub.add_option("--lambda2", config.weights.backward, "Backward reconstruction loss weight")->capture_default_str();
    sub.add_option("--lambda3", config.weights.tag, "Tag recovery loss weight")->capture_default_str();
    sub.add_option("--forward-loss", forward_kind, "Forward loss: js, mae or cosine")->check(kinds)->capture_default_str();
    sub.add_option("--backward-loss", backward_kind, "Backward loss: js, mae or cosine")->check(kinds)->capture_default_str();
    sub.add_option("--tag-loss", tag_kind, "Tag loss: js, mae or cosine")->check(kinds)->capture_default_str();
  }

  TrainConfig resolve() const {
    TrainConfig c = config;
    c.mode = parse_missing_mode(mode);
    c.forward_kind = parse_loss_kind(forward_kind);
    c.backward_kind = parse_loss_kind(backward_kind);
    c.tag_kind = parse_loss_kind(tag_kind);
    c.validate();
    return c;
  }
};

inline nlohmann::json epoch_json(const EpochStats& e) {
  return {{"epoch", e.epoch}, {"cls", e.cls},     {"forward", e.forward},    {"backward", e.backward},
          {"tag", e.tag},     {"total", e.total}, {"train_acc", e.train_acc}};
}

inline std::string history_csv(const History& h) {
  std::ostringstream oss;
  write_history_csv(oss, h);
  return oss.str();
}

inline EpochCallback progress(std::ostream& err, const std::string& label) {
  return [&err, label](const EpochStats& e) {
    err << label << " epoch " << e.epoch << " loss " << e.total << " train_acc " << e.train_acc << '\n';
  };
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthCmd {
  SynthSpec spec;
  std::string out, test_out;
  double test_fraction = 0.3;

  void attach(CLI::App& sub) {
    sub.add_option("--classes", spec.classes, "Number of classes")->capture_default_str();
    sub.add_option("--per-class", spec.per_class, "Segments per class")->capture_default_str();
    sub.add_option("--dim-visual", spec.widths[0], "Visual feature width")->capture_default_str();
    sub.add_option("--dim-acoustic", spec.widths[1], "Acoustic feature width")->capture_default_str();
    sub.add_option("--dim-textual", spec.widths[2], "Textual feature width")->capture_default_str();
    sub.add_option("--len-visual", spec.lengths[0], "Maximum visual sequence length")->capture_default_str();
    sub.add_option("--len-acoustic", spec.lengths[1], "Maximum acoustic sequence length")->capture_default_str();
    sub.add_option("--len-textual", spec.lengths[2], "Maximum textual sequence length")->capture_default_str();
    sub.add_option("--separation", spec.separation, "Distance scale between class anchors")->capture_default_str();
    sub.add_option("--noise", spec.noise, "Noise standard deviation")->capture_default_str();
    sub.add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
    sub.add_option("--out", out, "Output JSONL (all segments, or the training part with --test-out)")->required();
    sub.add_option("--test-out", test_out, "Also write a held-out split here");
    sub.add_option("--test-fraction", test_fraction, "Held-out fraction for --test-out")->capture_default_str();
  }

  int run(std::ostream& out_stream, std::ostream& err) const {
    const Dataset ds = synth_generate(spec);
    auto j = summary("synth");
    if (spec.separation == 0.0) {
      err << "warning: separation is 0, the data carries no class signal\n";
      j["warnings"] = {"no class signal"};
    }
    auto dump = [](const Dataset& d) {
      std::ostringstream oss;
      write_jsonl(oss, d);
      return oss.str();
    };
    if (test_out.empty()) {
      write_file(out, dump(ds));
      j["files"] = {{{"path", out}, {"segments", ds.size()}}};
    } else {
      const auto [train, test] = split_dataset(ds, test_fraction, spec.seed);
      write_file(out, dump(train));
      write_file(test_out, dump(test));
      j["files"] = {{{"path", out}, {"segments", train.size()}}, {{"path", test_out}, {"segments", test.size()}}};
    }
    j["segments"] = ds.size();
    j["class_counts"] = ds.class_counts();
    j["widths"] = ds.widths;
    out_stream << j.dump() << '\n';
    return kOk;
  }
};

struct PretrainCmd {
  ModelFlags model;
  TrainFlags train;
  std::string data, out, history;

  void attach(CLI::App& sub) {
    sub.add_option("--data", data, "Training JSONL")->required();
    sub.add_option("--out", out, "Teacher checkpoint to write")->required();
    sub.add_option("--history", history, "Per-epoch history CSV");
    model.attach(sub);
    train.attach_optimizer(sub);
  }

  int run(std::ostream& out_stream, std::ostream& err) const {
    const Dataset ds = load_jsonl(data);
    const ModelConfig mc = model.resolve(ds);
    const TrainConfig tc = train.resolve();
    auto result = pretrain_teacher(ds, mc, tc, progress(err, "pretrain"));
    save_teacher(out, result.teacher);
    if (!history.empty()) write_file(history, history_csv(result.history));
    auto j = summary("pretrain");
    j["checkpoint"] = out;
    j["epochs"] = result.history.epochs.size();
    j["train_accuracy"] = teacher_accuracy(result.teacher, ds);
    out_stream << j.dump() << '\n';
    return kOk;
  }
};

struct TrainCmd {
  ModelFlags model;
  TrainFlags train;
  std::string data, teacher, teacher_out, out, history;
  bool pretrain = false;
  std::optional<std::size_t> teacher_epochs;

  void attach(CLI::App& sub) {
    sub.add_option("--data", data, "Training JSONL")->required();
    sub.add_option("--teacher", teacher, "Pre-trained teacher checkpoint");
    sub.add_flag("--pretrain", pretrain, "Pre-train the teacher first instead of loading one");
    sub.add_option("--teacher-epochs", teacher_epochs, "Teacher epochs with --pretrain (default: --epochs)");
    sub.add_option("--teacher-out", teacher_out, "Save the teacher trained by --pretrain");
    sub.add_option("--out", out, "Student checkpoint to write")->required();
    sub.add_option("--history", history, "Per-epoch history CSV");
    model.attach(sub);
    train.attach_optimizer(sub);
    train.attach_objective(sub);
  }

  int run(std::ostream& out_stream, std::ostream& err) const {
    const Dataset ds = load_jsonl(data);
    const ModelConfig mc = model.resolve(ds);
    const TrainConfig tc = train.resolve();
    if (pretrain && !teacher.empty()) throw Refusal("--teacher and --pretrain are mutually exclusive");

    std::optional<Teacher> t;
    if (tc.weights.forward > 0.0) {
      if (pretrain) {
        TrainConfig teacher_tc = tc;
        if (teacher_epochs) teacher_tc.epochs = *teacher_epochs;
        t = pretrain_teacher(ds, mc, teacher_tc, progress(err, "pretrain")).teacher;
        if (!teacher_out.empty()) save_teacher(teacher_out, *t);
      } else if (!teacher.empty()) {
        t = load_teacher(teacher);
        check_widths(ds, t->config, "teacher checkpoint");
      } else {
        throw Refusal(
            "the forward loss needs a teacher: run `tate pretrain --data " + data +
            " --out teacher.json` and pass --teacher teacher.json, or add --pretrain (or set --lambda1 0)");
      }
    }

    auto result = tate::train(ds, t ? &*t : nullptr, mc, tc, progress(err, "train"));
    save_model(out, result.model);
    if (!history.empty()) write_file(history, history_csv(result.history));

    const Metrics m = evaluate(result.model, ds, 0.0, MissingMode::single, tc.seed);
    auto j = summary("train");
    j["checkpoint"] = out;
    j["epochs"] = result.history.epochs.size();
    j["parameters"] = result.model.params.scalar_count();
    j["history_columns"] = result.history.columns();
    if (!result.history.epochs.empty()) j["final_epoch"] = epoch_json(result.history.epochs.back());
    j["train_accuracy"] = m.accuracy;
    j["train_macro_f1"] = m.macro_f1;
    out_stream << j.dump() << '\n';
    return kOk;
  }
};

struct EvalCmd {
  std::string checkpoint, data, out, mode = "single";
  std::vector<double> etas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::uint64_t seed = 7;

  void attach(CLI::App& sub) {
    sub.add_option("--checkpoint", checkpoint, "Student checkpoint")->required();
    sub.add_option("--data", data, "Evaluation JSONL")->required();
    sub.add_option("--etas", etas, "Missing rates to sweep")->delimiter(',')->capture_default_str();
    sub.add_option("--mode", mode, "Missing mode: single or multiple")
        ->check(CLI::IsMember({"single", "multiple"}))
        ->capture_default_str();
    sub.add_option("--seed", seed, "Masking seed")->capture_default_str();
    sub.add_option("--out", out, "Also write the table as CSV");
  }

  int run(std::ostream& out_stream, std::ostream&) const {
    const Model model = load_model(checkpoint);
    const Dataset ds = load_jsonl(data, model.config.classes);
    check_widths(ds, model.config, "checkpoint");
    const MissingMode mm = parse_missing_mode(mode);
    for (double eta : etas) {
      if (!(eta >= 0.0 && eta <= 1.0)) throw Refusal("missing rate " + format_double(eta) + " is outside [0, 1]");
    }

    std::ostringstream csv;
    csv << "eta,M-F1,ACC\n";
    auto rows = nlohmann::json::array();
    for (double eta : etas) {
      const Metrics m = evaluate(model, ds, eta, mm, seed);
      csv << format_double(eta) << ',' << format_double(m.macro_f1) << ',' << format_double(m.accuracy) << '\n';
      auto row = to_json(m);
      row["eta"] = eta;
      rows.push_back(std::move(row));
    }
    if (!out.empty()) write_file(out, csv.str());
    out_stream << csv.str();
    auto j = summary("eval");
    j["mode"] = mode;
    j["seed"] = seed;
    j["samples"] = ds.size();
    j["rows"] = std::move(rows);
    out_stream << j.dump() << '\n';
    return kOk;
  }
};

/// Parameter group of a named parameter: everything before the last '.'.
inline std::string parameter_group(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

struct GradcheckCmd {
  std::size_t hidden = 16, heads = 2, samples = 2, classes = 3;
  double dropout = 0.0, eps = 1e-5, tolerance = 1e-4;
  std::uint64_t seed = 7;
  bool inject_fault = false;

  void attach(CLI::App& sub) {
    sub.add_option("--hidden", hidden, "Model width d")->capture_default_str();
    sub.add_option("--heads", heads, "Attention heads")->capture_default_str();
    sub.add_option("--samples", samples, "Segments in the checked batch")->capture_default_str();
    sub.add_option("--classes", classes, "Number of classes")->capture_default_str();
    sub.add_option("--dropout", dropout, "Dropout rate (must be 0)")->capture_default_str();
    sub.add_option("--eps", eps, "Finite-difference step")->capture_default_str();
    sub.add_option("--tolerance", tolerance, "Pass threshold on the relative error")->capture_default_str();
    sub.add_option("--seed", seed, "Seed for data and weights")->capture_default_str();
    sub.add_flag("--inject-fault", inject_fault, "Corrupt one backward rule (negative control)");
  }

  int run(std::ostream& out_stream, std::ostream&) const {
    if (dropout != 0.0) throw Refusal("gradcheck needs a deterministic loss; dropout must be 0");
    if (samples == 0) throw Refusal("gradcheck needs at least one sample");
    const auto start = std::chrono::steady_clock::now();

    SynthSpec spec;
    spec.classes = classes;
    spec.per_class = (samples + classes - 1) / classes;
    spec.widths = {5, 4, 6};
    spec.lengths = {3, 4, 2};
    spec.seed = seed;
    Dataset ds = synth_generate(spec);
    ds.segments.resize(samples);

    ModelConfig mc;
    mc.hidden = hidden;
    mc.heads = heads;
    mc.dropout = 0.0;
    mc = configure_for(ds, mc);
    mc.classes = classes;
    const Model model = make_model(mc, seed);
    const Teacher teacher = make_teacher(mc, seed);

    // Cycle through the valid patterns so the tag and the masking path are exercised.
    const auto patterns = all_valid_patterns();
    std::vector<Segment> masked;
    std::vector<Tensor> e_pre;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      masked.push_back(mask_missing(ds.segments[i], patterns[i % patterns.size()]));
      NoGradGuard no_grad;
      e_pre.push_back(teacher_forward(teacher, ds.segments[i]).representation->value);
    }
    const LossWeights weights;
    auto objective = [&]() {
      std::vector<Var> probs, fwd, bwd, decoded;
      std::vector<std::size_t> labels;
      std::vector<Tag> tags;
      for (std::size_t i = 0; i < masked.size(); ++i) {
        const auto out = student_forward(model, masked[i]);
        probs.push_back(out.probs);
        labels.push_back(masked[i].label);
        fwd.push_back(forward_loss(out.encoded, constant(e_pre[i])));
        bwd.push_back(backward_loss(out.decoded, out.joint));
        tags.push_back(out.tag);
        decoded.push_back(out.decoded);
      }
      return total_loss(cls_loss(probs, labels), mean(concat(fwd, 0)), mean(concat(bwd, 0)), tag_loss(tags, decoded),
                        weights);
    };

    const double saved_scale = testing::matmul_rhs_grad_scale();
    if (inject_fault) testing::matmul_rhs_grad_scale() = 1.01;
    GradCheckReport report;
    try {
      report = finite_diff_check(objective, model.params.all(), eps);
    } catch (...) {
      testing::matmul_rhs_grad_scale() = saved_scale;
      throw;
    }
    testing::matmul_rhs_grad_scale() = saved_scale;

    std::vector<std::pair<std::string, double>> groups;
    for (const auto& e : report.per_parameter) {
      const std::string g = parameter_group(e.name);
      auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& x) { return x.first == g; });
      if (it == groups.end()) it = groups.insert(groups.end(), {g, 0.0});
      it->second = std::max(it->second, e.max_rel_error);
    }
    bool pass = true;
    auto jgroups = nlohmann::json::object();
    for (const auto& [g, err] : groups) {
      const bool ok = err < tolerance;
      pass = pass && ok;
      out_stream << (ok ? "ok   " : "FAIL ") << g << " max_rel_error " << err << '\n';
      jgroups[g] = err;
    }
    auto j = summary("gradcheck");
    j["status"] = pass ? "ok" : "failed";
    j["max_rel_error"] = report.max_rel_error;
    j["tolerance"] = tolerance;
    j["groups"] = std::move(jgroups);
    j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out_stream << j.dump() << '\n';
    return pass ? kOk : kError;
  }
};

struct ExportCmd {
  std::string checkpoint, data, out, mode = "single", representation = "e_out";
  double eta = 0.0;
  std::uint64_t seed = 7;

  void attach(CLI::App& sub) {
    sub.add_option("--checkpoint", checkpoint, "Student checkpoint")->required();
    sub.add_option("--data", data, "Input JSONL")->required();
    sub.add_option("--out", out, "CSV to write")->required();
    sub.add_option("--eta", eta, "Missing rate applied before encoding")->capture_default_str();
    sub.add_option("--mode", mode, "Missing mode: single or multiple")
        ->check(CLI::IsMember({"single", "multiple"}))
        ->capture_default_str();
    sub.add_option("--seed", seed, "Masking seed")->capture_default_str();
    sub.add_option("--representation", representation, "e_out (encoder output) or e_all (joint input)")
        ->check(CLI::IsMember({"e_out", "e_all"}))
        ->capture_default_str();
  }

  int run(std::ostream& out_stream, std::ostream&) const {
    if (!(eta >= 0.0 && eta <= 1.0)) throw Refusal("missing rate must lie in [0, 1]");
    const Model model = load_model(checkpoint);
    const Dataset ds = load_jsonl(data, model.config.classes);
    check_widths(ds, model.config, "checkpoint");
    const auto predictions = predict(model, ds, eta, parse_missing_mode(mode), seed);
    const std::size_t width = model.config.joint_width();

    std::ostringstream csv;
    csv << "id,label,pattern";
    for (std::size_t i = 0; i < width; ++i) csv << ",v" << i;
    csv << '\n';
    for (std::size_t r = 0; r < predictions.size(); ++r) {
      const auto& p = predictions[r];
      const Var& rep = representation == "e_out" ? p.outputs.encoded : p.outputs.joint;
      csv << ds.segments[r].id << ',' << p.label << ',' << encode_tag(p.pattern).to_string();
      for (double v : rep->value.values()) csv << ',' << format_double(v);
      csv << '\n';
    }
    write_file(out, csv.str());
    auto j = summary("export-embeddings");
    j["path"] = out;
    j["rows"] = predictions.size();
    j["width"] = width;
    j["representation"] = representation;
    out_stream << j.dump() << '\n';
    return kOk;
  }
};

// ---------------------------------------------------------------------------

/// Entry point behind the `tate` binary. Exit codes: 0 success, 1 failure,
/// 2 usage or configuration refused, 3 numeric abort.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Tag-assisted transformer encoder for multimodal classification with missing modalities", "tate");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  SynthCmd synth;
  PretrainCmd pretrain;
  TrainCmd train;
  EvalCmd eval;
  GradcheckCmd gradcheck;
  ExportCmd export_cmd;

  struct Entry {
    CLI::App* app;
    std::function<int()> body;
  };
  std::vector<Entry> entries;
  std::map<CLI::App*, std::string> config_paths;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    cmd.attach(*sub);
    auto* cfg = &config_paths[sub];
    sub->add_option("--config", *cfg, "Flat key=value file; environment (TATE_*) and flags take precedence");
    for (CLI::Option* opt : sub->get_options()) {
      const std::string flag = opt->get_single_name();
      if (flag.empty() || flag == "help" || flag == "config") continue;
      opt->envname(env_name(flag));
    }
    entries.push_back({sub, [&cmd, &out, &err] { return cmd.run(out, err); }});
  };
  add("synth", "Generate a synthetic multimodal dataset", synth);
  add("pretrain", "Train the full-modality teacher", pretrain);
  add("train", "Train the student with the weighted objective", train);
  add("eval", "Evaluate a checkpoint across missing rates", eval);
  add("gradcheck", "Compare analytic and finite-difference gradients on a tiny model", gradcheck);
  add("export-embeddings", "Write per-segment representations as CSV", export_cmd);

  std::ostringstream cli_out, cli_err;
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, cli_out, cli_err);
    out << cli_out.str();
    err << cli_err.str();
    return code == 0 ? kOk : kUsage;
  }

  for (const auto& entry : entries) {
    if (!entry.app->parsed()) continue;
    try {
      const std::string& cfg = config_paths[entry.app];
      if (!cfg.empty()) apply_config_file(*entry.app, cfg);
      print_effective_config(*entry.app, err);
      return entry.body();
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      return kUsage;
    } catch (const Refusal& e) {
      err << "error: " << e.what() << '\n';
      return kUsage;
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << '\n';
      return kUsage;
    } catch (const NumericError& e) {
      err << "error: numeric failure: " << e.what() << '\n';
      return kNumeric;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kError;
    }
  }
  return kUsage;
}

}  // namespace tate::cli
