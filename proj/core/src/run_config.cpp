#include "pct/run_config.hpp"

#include <cmath>
#include <numbers>

#include "pct/checkpoint.hpp"
#include "pct/io.hpp"

namespace pct::aug {

void to_json(Json& j, const AugmentRecipe& v) {
  j = Json{{"flip_prob", v.flip_prob},     {"max_rotation_deg", v.max_rotation_deg},
           {"scale_min", v.scale_min},     {"scale_max", v.scale_max},
           {"crop", v.crop},               {"jitter_prob", v.jitter_prob},
           {"jitter_strength", v.jitter_strength}, {"blur", v.blur},
           {"blur_prob", v.blur_prob},     {"blur_sigma_min", v.blur_sigma_min},
           {"blur_sigma_max", v.blur_sigma_max}};
}

void from_json(const Json& j, AugmentRecipe& v) {
  reject_unknown_keys(j,
                      {"flip_prob", "max_rotation_deg", "scale_min", "scale_max", "crop", "jitter_prob",
                       "jitter_strength", "blur", "blur_prob", "blur_sigma_min", "blur_sigma_max"},
                      "augment");
  AugmentRecipe d;
  v.flip_prob = j.value("flip_prob", d.flip_prob);
  v.max_rotation_deg = j.value("max_rotation_deg", d.max_rotation_deg);
  v.scale_min = j.value("scale_min", d.scale_min);
  v.scale_max = j.value("scale_max", d.scale_max);
  v.crop = j.value("crop", d.crop);
  v.jitter_prob = j.value("jitter_prob", d.jitter_prob);
  v.jitter_strength = j.value("jitter_strength", d.jitter_strength);
  v.blur = j.value("blur", d.blur);
  v.blur_prob = j.value("blur_prob", d.blur_prob);
  v.blur_sigma_min = j.value("blur_sigma_min", d.blur_sigma_min);
  v.blur_sigma_max = j.value("blur_sigma_max", d.blur_sigma_max);
}

void to_json(Json& j, const CamDropConfig& v) { j = Json{{"max_drops", v.max_drops}, {"apply_prob", v.apply_prob}}; }

void from_json(const Json& j, CamDropConfig& v) {
  reject_unknown_keys(j, {"max_drops", "apply_prob"}, "camdrop_config");
  CamDropConfig d;
  v.max_drops = j.value("max_drops", d.max_drops);
  v.apply_prob = j.value("apply_prob", d.apply_prob);
}

}  // namespace pct::aug

namespace pct::loss {

void to_json(Json& j, const LossWeights& v) {
  j = Json{{"lambda_pv", v.lambda_pv},     {"lambda_strong", v.lambda_strong}, {"lambda_bfd", v.lambda_bfd},
           {"focal_gamma", v.focal_gamma}, {"rampup_iters", v.rampup_iters}};
}

void from_json(const Json& j, LossWeights& v) {
  reject_unknown_keys(j, {"lambda_pv", "lambda_strong", "lambda_bfd", "focal_gamma", "rampup_iters"}, "loss");
  LossWeights d;
  v.lambda_pv = j.value("lambda_pv", d.lambda_pv);
  v.lambda_strong = j.value("lambda_strong", d.lambda_strong);
  v.lambda_bfd = j.value("lambda_bfd", d.lambda_bfd);
  v.focal_gamma = j.value("focal_gamma", d.focal_gamma);
  v.rampup_iters = j.value("rampup_iters", d.rampup_iters);
}

}  // namespace pct::loss

namespace pct::train {

namespace {

constexpr std::pair<Mode, const char*> kModes[] = {
    {Mode::kSup, "sup"}, {Mode::kPct, "pct"}, {Mode::kMt, "mt"}, {Mode::kPctMt, "pct_mt"}, {Mode::kUda, "uda"}};

}  // namespace

Mode parse_mode(const std::string& s) {
  for (auto [m, name] : kModes)
    if (s == name) return m;
  throw ConfigError("invalid mode '" + s + "' (expected sup, pct, mt, pct_mt or uda)");
}

std::string to_string(Mode m) {
  for (auto [mode, name] : kModes)
    if (m == mode) return name;
  return "?";
}

bool uses_teacher(Mode m) { return m == Mode::kMt || m == Mode::kPctMt; }
bool uses_pv(Mode m) { return m == Mode::kPct || m == Mode::kPctMt || m == Mode::kUda; }

void EmaConfig::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("ema alpha must be in [0, 1]");
  if (update_every < 1) throw ConfigError("ema update_every must be >= 1");
}

void OptimizerConfig::validate() const {
  if (!(lr > 0) || weight_decay < 0) throw ConfigError("optimizer lr must be positive, weight decay non-negative");
  if (!(pct_start > 0 && pct_start < 1)) throw ConfigError("pct_start must be in (0, 1)");
  if (!(div_factor > 0) || !(final_div_factor > 0)) throw ConfigError("div factors must be positive");
}

void RunConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (labeled_batch < 1) throw ConfigError("labeled_batch must be >= 1");
  if (unlabeled_batch < 0) throw ConfigError("unlabeled_batch must be >= 0");
  if (uses_teacher(mode) && unlabeled_batch < 1) throw ConfigError("mean-teacher modes need unlabeled_batch >= 1");
  if (bfd && !uses_teacher(mode)) throw ConfigError("bfd requires a mean-teacher mode (mt or pct_mt)");
  if (!(bfd_config.p >= 0 && bfd_config.p < 1)) throw ConfigError("bfd p must be in [0, 1)");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("cadences must be non-negative");
  loss.validate();
  ema.validate();
  optimizer.validate();
  augment.validate();
  camdrop_config.validate(4);
  model.validate();
}

double one_cycle_lr(int64_t iter, int64_t total, const OptimizerConfig& cfg) {
  const double initial = cfg.lr / cfg.div_factor;
  const double final_lr = initial / cfg.final_div_factor;
  const double up_end = cfg.pct_start * static_cast<double>(total) - 1.0;
  const double down_end = static_cast<double>(total) - 1.0;
  const double t = static_cast<double>(std::min(iter, total - 1));
  auto anneal = [](double start, double end, double frac) {
    return end + (start - end) / 2.0 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (up_end <= 0) return anneal(cfg.lr, final_lr, t / std::max(down_end, 1.0));
  if (t <= up_end) return anneal(initial, cfg.lr, t / up_end);
  return anneal(cfg.lr, final_lr, (t - up_end) / std::max(down_end - up_end, 1.0));
}

void to_json(Json& j, const RunConfig& v) {
  j = Json{{"schema_version", kRunConfigSchema},
           {"mode", to_string(v.mode)},
           {"camdrop", v.camdrop},
           {"bfd", v.bfd},
           {"seed", v.seed},
           {"iterations", v.iterations},
           {"labeled_batch", v.labeled_batch},
           {"unlabeled_batch", v.unlabeled_batch},
           {"eval_every", v.eval_every},
           {"checkpoint_every", v.checkpoint_every},
           {"eval_threshold", v.eval_threshold},
           {"loss", v.loss},
           {"ema", {{"alpha", v.ema.alpha}, {"update_every", v.ema.update_every}}},
           {"camdrop_config", v.camdrop_config},
           {"bfd_config", {{"p", v.bfd_config.p}, {"channelwise", v.bfd_config.channelwise}}},
           {"optimizer",
            {{"lr", v.optimizer.lr},
             {"weight_decay", v.optimizer.weight_decay},
             {"beta1", v.optimizer.beta1},
             {"beta2", v.optimizer.beta2},
             {"eps", v.optimizer.eps},
             {"pct_start", v.optimizer.pct_start},
             {"div_factor", v.optimizer.div_factor},
             {"final_div_factor", v.optimizer.final_div_factor}}},
           {"augment", v.augment},
           {"model", v.model},
           {"data",
            {{"train", v.data.train},
             {"split", v.data.split},
             {"val", v.data.val},
             {"source", v.data.source},
             {"target", v.data.target},
             {"val_frames", v.data.val_frames}}}};
}

void from_json(const Json& j, RunConfig& v) {
  reject_unknown_keys(j,
                      {"schema_version", "mode", "camdrop", "bfd", "seed", "iterations", "labeled_batch",
                       "unlabeled_batch", "eval_every", "checkpoint_every", "eval_threshold", "loss", "ema",
                       "camdrop_config", "bfd_config", "optimizer", "augment", "model", "data"},
                      "run config");
  const int schema = j.at("schema_version").get<int>();
  if (schema != kRunConfigSchema) throw ConfigError("unsupported schema_version " + std::to_string(schema));
  RunConfig d;
  v = d;
  v.mode = parse_mode(j.value("mode", to_string(d.mode)));
  v.camdrop = j.value("camdrop", d.camdrop);
  v.bfd = j.value("bfd", d.bfd);
  v.seed = j.value("seed", d.seed);
  v.iterations = j.value("iterations", d.iterations);
  v.labeled_batch = j.value("labeled_batch", d.labeled_batch);
  v.unlabeled_batch = j.value("unlabeled_batch", d.unlabeled_batch);
  v.eval_every = j.value("eval_every", d.eval_every);
  v.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  v.eval_threshold = j.value("eval_threshold", d.eval_threshold);
  if (j.contains("loss")) v.loss = j.at("loss").get<loss::LossWeights>();
  if (j.contains("ema")) {
    const auto& e = j.at("ema");
    reject_unknown_keys(e, {"alpha", "update_every"}, "ema");
    v.ema.alpha = e.value("alpha", d.ema.alpha);
    v.ema.update_every = e.value("update_every", d.ema.update_every);
  }
  if (j.contains("camdrop_config")) v.camdrop_config = j.at("camdrop_config").get<aug::CamDropConfig>();
  if (j.contains("bfd_config")) {
    const auto& b = j.at("bfd_config");
    reject_unknown_keys(b, {"p", "channelwise"}, "bfd_config");
    v.bfd_config.p = b.value("p", d.bfd_config.p);
    v.bfd_config.channelwise = b.value("channelwise", d.bfd_config.channelwise);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown_keys(o, {"lr", "weight_decay", "beta1", "beta2", "eps", "pct_start", "div_factor", "final_div_factor"},
                        "optimizer");
    const auto& od = d.optimizer;
    v.optimizer.lr = o.value("lr", od.lr);
    v.optimizer.weight_decay = o.value("weight_decay", od.weight_decay);
    v.optimizer.beta1 = o.value("beta1", od.beta1);
    v.optimizer.beta2 = o.value("beta2", od.beta2);
    v.optimizer.eps = o.value("eps", od.eps);
    v.optimizer.pct_start = o.value("pct_start", od.pct_start);
    v.optimizer.div_factor = o.value("div_factor", od.div_factor);
    v.optimizer.final_div_factor = o.value("final_div_factor", od.final_div_factor);
  }
  if (j.contains("augment")) v.augment = j.at("augment").get<aug::AugmentRecipe>();
  if (j.contains("model")) v.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("data")) {
    const auto& p = j.at("data");
    reject_unknown_keys(p, {"train", "split", "val", "source", "target", "val_frames"}, "data");
    v.data.train = p.value("train", "");
    v.data.split = p.value("split", "");
    v.data.val = p.value("val", "");
    v.data.source = p.value("source", "");
    v.data.target = p.value("target", "");
    v.data.val_frames = p.value("val_frames", 0);
  }
}

RunConfig read_run_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(io::read_text(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const Json::exception& e) {
    throw ConfigError("bad run config '" + path.string() + "': " + e.what());
  }
}

}  // namespace pct::train
