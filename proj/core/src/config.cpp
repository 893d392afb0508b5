// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

using nlohmann::json;

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::Lora: return "lora";
    case Mode::HyperLora: return "hyper_lora";
    case Mode::AdaLora: return "adalora";
    case Mode::HyperAdaLora: return "hyper_adalora";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  if (name == "lora") return Mode::Lora;
  if (name == "hyper_lora") return Mode::HyperLora;
  if (name == "adalora") return Mode::AdaLora;
  if (name == "hyper_adalora") return Mode::HyperAdaLora;
  throw ConfigError("mode", "unknown mode '" + std::string(name) +
                                "' (expected lora, hyper_lora, adalora or hyper_adalora)");
}

std::string_view task_name(TaskVariant v) {
  return v == TaskVariant::LowRankRegression ? "lowrank_regression" : "seq_classification";
}

std::size_t adapted_layer_count(const TaskConfig& task) {
  return task.variant == TaskVariant::SeqClassification ? 2 : task.num_layers;
}

namespace {

class Reader {
 public:
  Reader(const json& obj, std::string prefix, std::set<std::string> allowed)
      : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
    for (const auto& [key, value] : obj_.items()) {
      if (!allowed.count(key)) throw ConfigError(path(key), "unknown field");
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key); }
  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  template <typename T>
  void get(const std::string& key, T& out) const {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path(key), "expected a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(path(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<long long>() < 0) throw ConfigError(path(key), "must be non-negative");
        }
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path(key), "expected a number");
        out = v.get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path(key), "expected a string");
        out = v.get<std::string>();
      } else {
        if (!v.is_array()) throw ConfigError(path(key), "expected an array");
        out.clear();
        for (const auto& e : v) {
          if (!e.is_number_integer() || e.get<long long>() <= 0) {
            throw ConfigError(path(key), "expected positive integers");
          }
          out.push_back(e.get<typename T::value_type>());
        }
      }
    } catch (const json::exception& e) {
      throw ConfigError(path(key), e.what());
    }
  }

  const json& sub(const std::string& key) const { return obj_.at(key); }

 private:
  const json& obj_;
  std::string prefix_;
};

void require(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError(field, msg);
}

}  // namespace

void validate(const TrainConfig& c) {
  require(c.lr_max > 0.0, "lr_max", "must be positive");
  require(c.gamma >= 0.0, "gamma", "must be non-negative");
  require(c.rank >= 1, "rank", "must be at least 1");
  require(c.batch_size >= 1, "batch_size", "must be at least 1");
  require(c.total_steps >= 1, "total_steps", "must be at least 1");
  require(c.warmup_steps >= 0, "warmup_steps", "must be non-negative");
  require(c.total_steps > c.warmup_steps, "total_steps", "must exceed warmup_steps");
  require(c.init_std > 0.0, "init_std", "must be positive");
  require(c.grad_clip >= 0.0, "grad_clip", "must be non-negative (0 disables)");
  require(c.threshold > 0.0, "threshold", "must be positive");
  require(c.smoothing_window >= 1, "smoothing_window", "must be at least 1");

  const auto& t = c.task;
  require(t.d1 >= 1 && t.d2 >= 1, "task.d1", "dimensions must be positive");
  require(t.true_rank >= 1, "task.true_rank", "must be at least 1");
  require(t.true_rank <= c.rank, "task.true_rank", "must not exceed rank so the adapter can fit the planted increment");
  require(t.dataset_size >= 1, "task.dataset_size", "must be positive");
  require(t.noise >= 0.0, "task.noise", "must be non-negative");
  require(adapted_layer_count(t) >= 1, "task.num_layers", "must be at least 1");
  if (t.variant == TaskVariant::SeqClassification) {
    require(t.vocab >= 2, "task.vocab", "must be at least 2");
    require(t.seq_len >= 1, "task.seq_len", "must be positive");
    require(t.classes >= 2, "task.classes", "must be at least 2");
  }
  const std::size_t min_dim = std::min(t.d1, t.d2);
  if (c.mode == Mode::Lora || c.mode == Mode::HyperLora) {
    require(c.rank <= min_dim / 2, "rank", "LoRA rank must satisfy r <= min(d1, d2)/2");
  } else {
    require(c.rank <= min_dim, "rank", "must not exceed min(d1, d2)");
  }

  const auto& h = c.hyper;
  require(h.hidden >= 1, "hyper.hidden", "must be positive");
  require(h.init_std > 0.0, "hyper.init_std", "must be positive");
  require(h.lr_scale > 0.0, "hyper.lr_scale", "must be positive");
  require(h.ln_eps > 0.0, "hyper.ln_eps", "must be positive");
  if (h.backend == BackendKind::Attention) {
    require(h.heads >= 1 && h.hidden % h.heads == 0, "hyper.heads", "must divide hyper.hidden");
    require(h.ffn >= 1, "hyper.ffn", "must be positive");
  }
  if (h.backend == BackendKind::Conv) {
    require(!h.conv_kernels.empty(), "hyper.conv_kernels", "needs at least one layer");
    for (auto k : h.conv_kernels) require(k % 2 == 1, "hyper.conv_kernels", "kernel widths must be odd");
  }

  const auto& p = c.prune;
  if (p.enabled) {
    require(p.delta_t >= 1, "prune.delta_t", "must be positive");
    require(p.k >= 1, "prune.k", "must be positive");
    require(p.start_step >= 0, "prune.start_step", "must be non-negative");
    require(p.end_step >= p.start_step, "prune.end_step", "must not precede prune.start_step");
  }
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  Reader root(j, "",
              {"mode", "backend", "hyper", "lr_max", "gamma", "rank", "batch_size", "total_steps", "warmup_steps",
               "seed", "prune", "task", "init_std", "grad_clip", "threshold", "smoothing_window", "record_wall_ms",
               "save_checkpoint"});

  std::string mode = std::string(mode_name(c.mode));
  root.get("mode", mode);
  c.mode = parse_mode(mode);

  if (root.has("hyper")) {
    Reader h(root.sub("hyper"), "hyper",
             {"preset", "hidden", "heads", "ffn", "mlp_widths", "mlp_activation", "conv_kernels", "init_std", "ln_eps",
              "residual", "position_encoding", "lr_scale"});
    std::string preset = "desk";
    h.get("preset", preset);
    if (preset == "fidelity") {
      c.hyper = HyperConfig::fidelity();
    } else if (preset != "desk") {
      throw ConfigError("hyper.preset", "expected 'desk' or 'fidelity'");
    }
    h.get("hidden", c.hyper.hidden);
    h.get("heads", c.hyper.heads);
    h.get("ffn", c.hyper.ffn);
    h.get("mlp_widths", c.hyper.mlp_widths);
    std::string act = std::string(activation_name(c.hyper.mlp_activation));
    h.get("mlp_activation", act);
    c.hyper.mlp_activation = parse_activation(act);
    h.get("conv_kernels", c.hyper.conv_kernels);
    h.get("init_std", c.hyper.init_std);
    h.get("ln_eps", c.hyper.ln_eps);
    h.get("residual", c.hyper.residual);
    h.get("position_encoding", c.hyper.position_encoding);
    h.get("lr_scale", c.hyper.lr_scale);
  }
  if (root.has("backend")) {
    std::string backend;
    root.get("backend", backend);
    c.hyper.backend = parse_backend(backend);
  }

  root.get("lr_max", c.lr_max);
  root.get("gamma", c.gamma);
  root.get("rank", c.rank);
  root.get("batch_size", c.batch_size);
  root.get("total_steps", c.total_steps);
  c.warmup_steps = c.total_steps / 20;
  root.get("warmup_steps", c.warmup_steps);
  root.get("seed", c.seed);
  root.get("init_std", c.init_std);
  root.get("grad_clip", c.grad_clip);
  root.get("threshold", c.threshold);
  root.get("smoothing_window", c.smoothing_window);
  root.get("record_wall_ms", c.record_wall_ms);
  root.get("save_checkpoint", c.save_checkpoint);

  if (root.has("task")) {
    Reader t(root.sub("task"), "task",
             {"variant", "d1", "d2", "true_rank", "num_layers", "vocab", "seq_len", "classes", "dataset_size", "noise",
              "signal", "signal_decay", "seed"});
    std::string variant = std::string(task_name(c.task.variant));
    t.get("variant", variant);
    if (variant == "lowrank_regression") {
      c.task.variant = TaskVariant::LowRankRegression;
    } else if (variant == "seq_classification") {
      c.task.variant = TaskVariant::SeqClassification;
    } else {
      throw ConfigError("task.variant", "expected lowrank_regression or seq_classification");
    }
    t.get("d1", c.task.d1);
    t.get("d2", c.task.d2);
    t.get("true_rank", c.task.true_rank);
    t.get("num_layers", c.task.num_layers);
    t.get("vocab", c.task.vocab);
    t.get("seq_len", c.task.seq_len);
    t.get("classes", c.task.classes);
    t.get("dataset_size", c.task.dataset_size);
    t.get("noise", c.task.noise);
    t.get("signal", c.task.signal);
    t.get("signal_decay", c.task.signal_decay);
    if (t.has("seed")) {
      c.task.has_seed = true;
      t.get("seed", c.task.seed);
    }
  }

  c.prune.start_step = c.warmup_steps;
  c.prune.end_step = c.total_steps * 4 / 5;
  c.prune.target_rank = adapted_layer_count(c.task) * c.task.true_rank;
  if (root.has("prune")) {
    Reader p(root.sub("prune"), "prune", {"enabled", "delta_t", "k", "start_step", "end_step", "target_rank"});
    p.get("enabled", c.prune.enabled);
    p.get("delta_t", c.prune.delta_t);
    p.get("k", c.prune.k);
    p.get("start_step", c.prune.start_step);
    p.get("end_step", c.prune.end_step);
    p.get("target_rank", c.prune.target_rank);
  }

  validate(c);
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const TrainConfig& c) {
  json hyper = {{"hidden", c.hyper.hidden},
                {"heads", c.hyper.heads},
                {"ffn", c.hyper.ffn},
                {"mlp_widths", c.hyper.mlp_widths},
                {"mlp_activation", activation_name(c.hyper.mlp_activation)},
                {"conv_kernels", c.hyper.conv_kernels},
                {"init_std", c.hyper.init_std},
                {"ln_eps", c.hyper.ln_eps},
                {"residual", c.hyper.residual},
                {"position_encoding", c.hyper.position_encoding},
                {"lr_scale", c.hyper.lr_scale}};
  json task = {{"variant", task_name(c.task.variant)},
               {"d1", c.task.d1},
               {"d2", c.task.d2},
               {"true_rank", c.task.true_rank},
               {"num_layers", c.task.num_layers},
               {"vocab", c.task.vocab},
               {"seq_len", c.task.seq_len},
               {"classes", c.task.classes},
               {"dataset_size", c.task.dataset_size},
               {"noise", c.task.noise},
               {"signal", c.task.signal},
               {"signal_decay", c.task.signal_decay}};
  if (c.task.has_seed) task["seed"] = c.task.seed;
  json prune = {{"enabled", c.prune.enabled},       {"delta_t", c.prune.delta_t},
                {"k", c.prune.k},                   {"start_step", c.prune.start_step},
                {"end_step", c.prune.end_step},     {"target_rank", c.prune.target_rank}};
  return {{"mode", mode_name(c.mode)},
          {"backend", backend_name(c.hyper.backend)},
          {"hyper", hyper},
          {"lr_max", c.lr_max},
          {"gamma", c.gamma},
          {"rank", c.rank},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"warmup_steps", c.warmup_steps},
          {"seed", c.seed},
          {"prune", prune},
          {"task", task},
          {"init_std", c.init_std},
          {"grad_clip", c.grad_clip},
          {"threshold", c.threshold},
          {"smoothing_window", c.smoothing_window},
          {"record_wall_ms", c.record_wall_ms},
          {"save_checkpoint", c.save_checkpoint}};
}

}  // namespace hyperadapt
