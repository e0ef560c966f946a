#include "steinfed/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

using json = nlohmann::json;

// Walks one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(display(), "expected an object");
  }

  std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  const json& at(const std::string& key) { return node_.at(key); }

  double real(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number()) throw ConfigError(child(key), "expected a number");
    return v.get<double>();
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number_integer()) throw ConfigError(child(key), "expected an integer");
    return v.get<int>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number_unsigned()) {
      throw ConfigError(child(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_boolean()) throw ConfigError(child(key), "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_string()) throw ConfigError(child(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<int> int_list(const std::string& key, const std::vector<int>& fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_array()) throw ConfigError(child(key), "expected an array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer()) {
        throw ConfigError(child(key) + "[" + std::to_string(i) + "]", "expected an integer");
      }
      out.push_back(v[i].get<int>());
    }
    return out;
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()), "unknown key");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum, std::size_t M>
Enum choose(const std::string& path, const std::string& value,
            const std::pair<const char*, Enum> (&options)[M]) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(path, "unknown value '" + value + "' (expected one of: " + names + ")");
}

constexpr std::pair<const char*, ExperimentKind> kExperiments[] = {
    {"gaussian_mixture", ExperimentKind::kGaussianMixture},
    {"multilabel", ExperimentKind::kMultilabel},
};
constexpr std::pair<const char*, Method> kMethods[] = {
    {"dsvgd", Method::kDsvgd}, {"forget_svgd", Method::kForgetSvgd},
    {"retrain", Method::kRetrain}, {"pvi", Method::kPvi}, {"ulpvi", Method::kUlpvi},
};
constexpr std::pair<const char*, SchedulePolicy> kSchedules[] = {
    {"round_robin", SchedulePolicy::kRoundRobin},
    {"fixed_sequence", SchedulePolicy::kFixedSequence},
};
constexpr std::pair<const char*, RetrainMode> kRetrainModes[] = {
    {"centralized", RetrainMode::kCentralized},
    {"federated", RetrainMode::kFederated},
};
constexpr std::pair<const char*, DataSource> kSources[] = {
    {"synthetic", DataSource::kSynthetic},
    {"idx", DataSource::kIdx},
};
constexpr std::pair<const char*, Activation> kActivations[] = {
    {"relu", Activation::kRelu},
    {"tanh", Activation::kTanh},
};

template <typename Enum, std::size_t M>
const char* name_of(Enum e, const std::pair<const char*, Enum> (&options)[M]) {
  for (const auto& [name, v] : options) {
    if (v == e) return name;
  }
  return "?";
}

void read_protocol(Section& s, ProtocolConfig& p) {
  p.alpha = s.real("alpha", p.alpha);
  p.local_iters = s.integer("local_iters", p.local_iters);
  p.distill_iters = s.integer("distill_iters", p.distill_iters);
  p.step = s.real("step", p.step);
  p.distill_step = s.real("distill_step", p.distill_step);
  p.fudge = s.real("fudge", p.fudge);
  p.schedule = choose(s.child("schedule"), s.text("schedule", "round_robin"), kSchedules);
  p.sequence = s.int_list("sequence", p.sequence);
  p.include_prior_score = s.boolean("include_prior_score", p.include_prior_score);
  p.persist_optimizer = s.boolean("persist_optimizer", p.persist_optimizer);
  s.finish();
}

void read_kernel(Section& s, KernelConfig& k) {
  if (s.has("bandwidth")) {
    const json& v = s.at("bandwidth");
    if (v.is_string()) {
      if (v.get<std::string>() != "median") {
        throw ConfigError(s.child("bandwidth"), "expected \"median\" or a positive number");
      }
      k = KernelConfig::median();
    } else if (v.is_number()) {
      const double h = v.get<double>();
      if (!(h > 0.0)) throw ConfigError(s.child("bandwidth"), "must be positive");
      k = KernelConfig::fixed(h);
    } else {
      throw ConfigError(s.child("bandwidth"), "expected \"median\" or a positive number");
    }
  }
  s.finish();
}

void read_mixture(Section& s, MixtureSettings& m) {
  if (s.has("prior")) {
    Section p(s.at("prior"), s.child("prior"));
    m.prior_lo = p.real("lo", m.prior_lo);
    m.prior_hi = p.real("hi", m.prior_hi);
    p.finish();
  }
  if (s.has("grid")) {
    Section g(s.at("grid"), s.child("grid"));
    m.grid.lo = g.real("lo", m.grid.lo);
    m.grid.hi = g.real("hi", m.grid.hi);
    m.grid.points = g.integer("points", m.grid.points);
    g.finish();
  }
  if (s.has("agents")) {
    const json& a = s.at("agents");
    const std::string path = s.child("agents");
    if (!a.is_array()) throw ConfigError(path, "expected an array of mixtures");
    m.agents.clear();
    for (std::size_t k = 0; k < a.size(); ++k) {
      const std::string kpath = path + "[" + std::to_string(k) + "]";
      if (!a[k].is_array()) throw ConfigError(kpath, "expected an array of components");
      std::vector<MixtureComponentSpec> comps;
      for (std::size_t i = 0; i < a[k].size(); ++i) {
        Section c(a[k][i], kpath + "[" + std::to_string(i) + "]");
        MixtureComponentSpec spec;
        spec.weight = c.real("weight", spec.weight);
        spec.mean = c.real("mean", spec.mean);
        spec.variance = c.real("variance", spec.variance);
        c.finish();
        if (!(spec.weight > 0.0)) throw ConfigError(c.child("weight"), "must be positive");
        if (!(spec.variance > 0.0)) throw ConfigError(c.child("variance"), "must be positive");
        comps.push_back(spec);
      }
      if (comps.empty()) throw ConfigError(kpath, "a mixture needs at least one component");
      m.agents.push_back(std::move(comps));
    }
  }
  s.finish();
}

void read_multilabel(Section& s, MultilabelSettings& m) {
  m.source = choose(s.child("source"), s.text("source", "synthetic"), kSources);
  if (s.has("synthetic")) {
    Section y(s.at("synthetic"), s.child("synthetic"));
    m.synthetic.classes = y.integer("classes", m.synthetic.classes);
    m.synthetic.dim = y.integer("dim", m.synthetic.dim);
    m.synthetic.count = y.integer("count", m.synthetic.count);
    m.test_count = y.integer("test_count", m.test_count);
    m.synthetic.separation = y.real("separation", m.synthetic.separation);
    m.synthetic.noise = y.real("noise", m.synthetic.noise);
    y.finish();
  }
  if (s.has("idx")) {
    Section x(s.at("idx"), s.child("idx"));
    m.idx.train_images = x.text("train_images", m.idx.train_images);
    m.idx.train_labels = x.text("train_labels", m.idx.train_labels);
    m.idx.test_images = x.text("test_images", m.idx.test_images);
    m.idx.test_labels = x.text("test_labels", m.idx.test_labels);
    x.finish();
  }
  m.labels_per_agent = s.integer("labels_per_agent", m.labels_per_agent);
  m.examples_per_agent = s.integer("examples_per_agent", m.examples_per_agent);
  m.prior_variance = s.real("prior_variance", m.prior_variance);
  if (s.has("pretrain")) {
    Section p(s.at("pretrain"), s.child("pretrain"));
    m.pretrain.hidden_units = p.integer("hidden_units", m.pretrain.hidden_units);
    m.pretrain.epochs = p.integer("epochs", m.pretrain.epochs);
    m.pretrain.step_size = p.real("step_size", m.pretrain.step_size);
    m.pretrain.activation = choose(p.child("activation"), p.text("activation", "relu"), kActivations);
    p.finish();
  }
  s.finish();
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

}  // namespace

const char* experiment_name(ExperimentKind kind) { return name_of(kind, kExperiments); }
const char* method_name(Method method) { return name_of(method, kMethods); }

bool is_parametric(Method method) { return method == Method::kPvi || method == Method::kUlpvi; }

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Section s(root, "");
  cfg.experiment = choose("experiment", s.text("experiment", "gaussian_mixture"), kExperiments);
  cfg.method = choose("method", s.text("method", "dsvgd"), kMethods);
  cfg.seed = s.unsigned_integer("seed", cfg.seed);
  cfg.particles = s.integer("particles", cfg.particles);
  cfg.agents = s.integer("agents", cfg.agents);
  cfg.forget = s.int_list("forget", cfg.forget);
  cfg.learn_rounds = s.integer("learn_rounds", cfg.learn_rounds);
  cfg.unlearn_rounds = s.integer("unlearn_rounds", cfg.unlearn_rounds);

  if (cfg.experiment == ExperimentKind::kGaussianMixture) cfg.retrain.mode = RetrainMode::kFederated;
  if (s.has("retrain")) {
    Section r(s.at("retrain"), "retrain");
    if (r.has("mode")) {
      cfg.retrain.mode = choose("retrain.mode", r.text("mode", ""), kRetrainModes);
    }
    cfg.retrain.budget = r.integer("budget", cfg.retrain.budget);
    r.finish();
  }
  if (s.has("protocol")) {
    Section p(s.at("protocol"), "protocol");
    read_protocol(p, cfg.protocol);
  }
  if (s.has("kernel")) {
    Section k(s.at("kernel"), "kernel");
    read_kernel(k, cfg.kernel);
  }
  if (s.has("kde")) {
    Section k(s.at("kde"), "kde");
    cfg.kde.lambda = k.real("lambda", cfg.kde.lambda);
    k.finish();
  }
  if (s.has("pvi")) {
    Section p(s.at("pvi"), "pvi");
    cfg.pvi.pvi.step = p.real("step", cfg.pvi.pvi.step);
    cfg.pvi.pvi.local_iters = p.integer("local_iters", cfg.pvi.pvi.local_iters);
    cfg.pvi.pvi.samples = p.integer("samples", cfg.pvi.pvi.samples);
    cfg.pvi.pvi.max_halvings = p.integer("max_halvings", cfg.pvi.pvi.max_halvings);
    cfg.pvi.prior_mean = p.real("prior_mean", cfg.pvi.prior_mean);
    cfg.pvi.prior_variance = p.real("prior_variance", cfg.pvi.prior_variance);
    p.finish();
  }
  if (s.has("mixture")) {
    Section m(s.at("mixture"), "mixture");
    read_mixture(m, cfg.mixture);
  }
  if (s.has("multilabel")) {
    Section m(s.at("multilabel"), "multilabel");
    read_multilabel(m, cfg.multilabel);
  }
  if (s.has("output")) {
    Section o(s.at("output"), "output");
    cfg.output.dir = o.text("dir", cfg.output.dir);
    cfg.output.record_wall_time = o.boolean("record_wall_time", cfg.output.record_wall_time);
    o.finish();
  }
  s.finish();

  cfg.protocol.seed = cfg.seed;
  cfg.pvi.pvi.seed = cfg.seed;
  cfg.pvi.pvi.alpha = cfg.protocol.alpha;
  cfg.multilabel.synthetic.seed = cfg.seed;
  cfg.multilabel.pretrain.seed = cfg.seed;
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void validate(const ExperimentConfig& cfg) {
  require(cfg.particles >= 1, "particles", "must be at least 1");
  require(cfg.agents >= 1, "agents", "must be at least 1");
  require(cfg.learn_rounds >= 0, "learn_rounds", "must be non-negative");
  require(cfg.unlearn_rounds >= 0, "unlearn_rounds", "must be non-negative");
  require(cfg.retrain.budget >= 0, "retrain.budget", "must be non-negative");

  std::set<int> forget;
  for (std::size_t i = 0; i < cfg.forget.size(); ++i) {
    const std::string path = "forget[" + std::to_string(i) + "]";
    require(cfg.forget[i] >= 1 && cfg.forget[i] <= cfg.agents, path,
            "agent id " + std::to_string(cfg.forget[i]) + " is outside 1.." +
                std::to_string(cfg.agents));
    require(forget.insert(cfg.forget[i]).second, path, "duplicate agent id");
  }
  if (cfg.method == Method::kForgetSvgd || cfg.method == Method::kUlpvi) {
    require(!cfg.forget.empty(), "forget", "unlearning needs at least one agent to forget");
  }

  const ProtocolConfig& p = cfg.protocol;
  require(p.alpha > 0.0, "protocol.alpha", "must be positive");
  require(p.local_iters >= 1, "protocol.local_iters", "must be at least 1");
  require(p.distill_iters >= 1, "protocol.distill_iters", "must be at least 1");
  require(p.step > 0.0, "protocol.step", "must be positive");
  require(p.distill_step > 0.0, "protocol.distill_step", "must be positive");
  require(p.fudge > 0.0, "protocol.fudge", "must be positive");
  for (std::size_t i = 0; i < p.sequence.size(); ++i) {
    require(p.sequence[i] >= 1 && p.sequence[i] <= cfg.agents,
            "protocol.sequence[" + std::to_string(i) + "]", "unknown agent id");
  }
  if (p.schedule == SchedulePolicy::kFixedSequence) {
    require(!p.sequence.empty(), "protocol.sequence", "fixed_sequence needs a non-empty list");
  }
  require(cfg.kde.lambda > 0.0, "kde.lambda", "must be positive");

  const PviSettings& v = cfg.pvi;
  require(v.pvi.step > 0.0, "pvi.step", "must be positive");
  require(v.pvi.local_iters >= 1, "pvi.local_iters", "must be at least 1");
  require(v.pvi.samples >= 2 && v.pvi.samples % 2 == 0, "pvi.samples",
          "must be an even number of at least 2 (antithetic pairs)");
  require(v.pvi.max_halvings >= 0, "pvi.max_halvings", "must be non-negative");
  require(v.prior_variance > 0.0, "pvi.prior_variance", "must be positive");

  if (cfg.experiment == ExperimentKind::kGaussianMixture) {
    const MixtureSettings& m = cfg.mixture;
    require(m.prior_lo < m.prior_hi, "mixture.prior", "lo must be below hi");
    require(m.grid.lo < m.grid.hi, "mixture.grid", "lo must be below hi");
    require(m.grid.points >= 3, "mixture.grid.points", "must be at least 3");
    require(static_cast<int>(m.agents.size()) == cfg.agents, "mixture.agents",
            "needs one mixture per agent (" + std::to_string(cfg.agents) + ")");
  } else {
    const MultilabelSettings& m = cfg.multilabel;
    if (m.source == DataSource::kSynthetic) {
      require(m.synthetic.classes >= 2, "multilabel.synthetic.classes", "must be at least 2");
      require(m.synthetic.dim >= 1, "multilabel.synthetic.dim", "must be at least 1");
      require(m.synthetic.count >= 1, "multilabel.synthetic.count", "must be positive");
      require(m.test_count >= 1, "multilabel.synthetic.test_count", "must be positive");
      require(m.synthetic.noise > 0.0, "multilabel.synthetic.noise", "must be positive");
      require(cfg.agents * m.labels_per_agent == m.synthetic.classes, "multilabel.labels_per_agent",
              "agents * labels_per_agent must equal the number of classes");
    } else {
      require(!m.idx.train_images.empty(), "multilabel.idx.train_images", "path required");
      require(!m.idx.train_labels.empty(), "multilabel.idx.train_labels", "path required");
      require(!m.idx.test_images.empty(), "multilabel.idx.test_images", "path required");
      require(!m.idx.test_labels.empty(), "multilabel.idx.test_labels", "path required");
      require(cfg.agents * m.labels_per_agent == 10, "multilabel.labels_per_agent",
              "agents * labels_per_agent must equal 10 for IDX digit data");
    }
    require(m.labels_per_agent >= 1, "multilabel.labels_per_agent", "must be positive");
    require(m.examples_per_agent >= 1 && m.examples_per_agent % m.labels_per_agent == 0,
            "multilabel.examples_per_agent", "must be a positive multiple of labels_per_agent");
    require(m.prior_variance > 0.0, "multilabel.prior_variance", "must be positive");
    require(m.pretrain.hidden_units >= 1, "multilabel.pretrain.hidden_units", "must be positive");
    require(m.pretrain.epochs >= 0, "multilabel.pretrain.epochs", "must be non-negative");
    require(m.pretrain.step_size > 0.0, "multilabel.pretrain.step_size", "must be positive");
  }
}

std::string dump_config(const ExperimentConfig& cfg) {
  json j;
  j["experiment"] = experiment_name(cfg.experiment);
  j["method"] = method_name(cfg.method);
  j["seed"] = cfg.seed;
  j["particles"] = cfg.particles;
  j["agents"] = cfg.agents;
  j["forget"] = cfg.forget;
  j["learn_rounds"] = cfg.learn_rounds;
  j["unlearn_rounds"] = cfg.unlearn_rounds;
  j["retrain"] = {{"mode", name_of(cfg.retrain.mode, kRetrainModes)},
                  {"budget", cfg.retrain.budget}};
  const ProtocolConfig& p = cfg.protocol;
  j["protocol"] = {{"alpha", p.alpha},
                   {"local_iters", p.local_iters},
                   {"distill_iters", p.distill_iters},
                   {"step", p.step},
                   {"distill_step", p.distill_step},
                   {"fudge", p.fudge},
                   {"schedule", name_of(p.schedule, kSchedules)},
                   {"sequence", p.sequence},
                   {"include_prior_score", p.include_prior_score},
                   {"persist_optimizer", p.persist_optimizer}};
  if (cfg.kernel.mode == KernelConfig::Mode::kFixed) {
    j["kernel"] = {{"bandwidth", cfg.kernel.h}};
  } else {
    j["kernel"] = {{"bandwidth", "median"}};
  }
  j["kde"] = {{"lambda", cfg.kde.lambda}};
  j["pvi"] = {{"step", cfg.pvi.pvi.step},
              {"local_iters", cfg.pvi.pvi.local_iters},
              {"samples", cfg.pvi.pvi.samples},
              {"max_halvings", cfg.pvi.pvi.max_halvings},
              {"prior_mean", cfg.pvi.prior_mean},
              {"prior_variance", cfg.pvi.prior_variance}};
  json agents = json::array();
  for (const auto& mix : cfg.mixture.agents) {
    json comps = json::array();
    for (const auto& c : mix) {
      comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
    }
    agents.push_back(comps);
  }
  j["mixture"] = {{"prior", {{"lo", cfg.mixture.prior_lo}, {"hi", cfg.mixture.prior_hi}}},
                  {"grid",
                   {{"lo", cfg.mixture.grid.lo},
                    {"hi", cfg.mixture.grid.hi},
                    {"points", cfg.mixture.grid.points}}},
                  {"agents", agents}};
  const MultilabelSettings& m = cfg.multilabel;
  j["multilabel"] = {
      {"source", name_of(m.source, kSources)},
      {"synthetic",
       {{"classes", m.synthetic.classes},
        {"dim", m.synthetic.dim},
        {"count", m.synthetic.count},
        {"test_count", m.test_count},
        {"separation", m.synthetic.separation},
        {"noise", m.synthetic.noise}}},
      {"idx",
       {{"train_images", m.idx.train_images},
        {"train_labels", m.idx.train_labels},
        {"test_images", m.idx.test_images},
        {"test_labels", m.idx.test_labels}}},
      {"labels_per_agent", m.labels_per_agent},
      {"examples_per_agent", m.examples_per_agent},
      {"prior_variance", m.prior_variance},
      {"pretrain",
       {{"hidden_units", m.pretrain.hidden_units},
        {"epochs", m.pretrain.epochs},
        {"step_size", m.pretrain.step_size},
        {"activation", name_of(m.pretrain.activation, kActivations)}}}};
  j["output"] = {{"dir", cfg.output.dir}, {"record_wall_time", cfg.output.record_wall_time}};
  return j.dump(2);
}

}  // namespace steinfed
