// Command-line driver: data generation, training, completion, meshing,
// evaluation and the verification suites.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgca/metrics.hpp"
#include "cgca/surface.hpp"
#include "cgca/training.hpp"
#include "cgca/verify.hpp"

namespace fs = std::filesystem;
using namespace cgca;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Settings {
  std::string profile = "desk";
  TrainConfig train = desk_config();
  CorpusSpec corpus = desk_corpus();

  std::string dataset;
  std::string ae_checkpoint;
  std::string kernel_checkpoint;
  std::string out = ".";
  std::string input;
  std::size_t input_id = 0;
  std::string state;
  double iso = 0.0;
  int threads = 1;

  std::string suites = "convergence,kl,final,gradients";
  VerifyOptions verify{};
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T value{};
  is >> value;
  if (!is || !is.eof()) throw ConfigError("invalid value '" + text + "' for config key '" + key + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid value '" + text + "' for config key '" + key + "' (expected true/false)");
}

std::vector<int> parse_widths(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const int w = parse_number<int>(key, part);
    if (w <= 0) throw ConfigError("config key '" + key + "' needs positive widths");
    out.push_back(w);
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

std::string join_widths(const std::vector<int>& v) {
  std::string s;
  for (std::size_t n = 0; n < v.size(); ++n) s += (n ? "," : "") + std::to_string(v[n]);
  return s;
}

struct Field {
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

// Helpers binding one key to a member through accessor lambdas.
template <typename Ref>
Field int_field(const std::string& key, Ref ref, long long lo = 0) {
  return {[=](Settings& s, const std::string& v) {
            const auto n = parse_number<long long>(key, v);
            if (n < lo) throw ConfigError("config key '" + key + "' must be >= " + std::to_string(lo));
            ref(s) = static_cast<std::remove_reference_t<decltype(ref(s))>>(n);
          },
          [=](const Settings& s) { return std::to_string(ref(const_cast<Settings&>(s))); }};
}

template <typename Ref>
Field real_field(const std::string& key, Ref ref) {
  return {[=](Settings& s, const std::string& v) { ref(s) = parse_number<double>(key, v); },
          [=](const Settings& s) { return format_double(ref(const_cast<Settings&>(s))); }};
}

template <typename Ref>
Field text_field(Ref ref) {
  return {[=](Settings& s, const std::string& v) { ref(s) = v; },
          [=](const Settings& s) { return ref(const_cast<Settings&>(s)); }};
}

template <typename Ref>
Field bool_field(const std::string& key, Ref ref) {
  return {[=](Settings& s, const std::string& v) { ref(s) = parse_bool(key, v); },
          [=](const Settings& s) { return std::string(ref(const_cast<Settings&>(s)) ? "true" : "false"); }};
}

template <typename Ref>
Field widths_field(const std::string& key, Ref ref) {
  return {[=](Settings& s, const std::string& v) { ref(s) = parse_widths(key, v); },
          [=](const Settings& s) { return join_widths(ref(const_cast<Settings&>(s))); }};
}

#define REF(member) [](Settings& s) -> auto& { return s.member; }

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["profile"] = text_field(REF(profile));
    f["seed"] = int_field("seed", REF(train.seed));
    // corpus
    f["resolution"] = {[](Settings& s, const std::string& v) {
                         const int r = parse_number<int>("resolution", v);
                         if (r < 4 || r > 512) throw ConfigError("config key 'resolution' must be in [4, 512]");
                         s.corpus.grid.resolution = r;
                         s.corpus.grid.voxel_size = 2.0 / r;
                       },
                       [](const Settings& s) { return std::to_string(s.corpus.grid.resolution); }};
    f["mode"] = {[](Settings& s, const std::string& v) {
                   if (v == "sdf") s.corpus.mode = FieldMode::Signed;
                   else if (v == "udf") s.corpus.mode = FieldMode::Unsigned;
                   else throw ConfigError("invalid value '" + v + "' for config key 'mode' (expected sdf/udf)");
                   s.train.mode = s.corpus.mode;
                 },
                 [](const Settings& s) { return std::string(s.train.mode == FieldMode::Signed ? "sdf" : "udf"); }};
    f["train_per_kind"] = int_field("train_per_kind", REF(corpus.train_per_kind), 1);
    f["test_per_kind"] = int_field("test_per_kind", REF(corpus.test_per_kind));
    f["scale"] = real_field("scale", REF(corpus.scale));
    f["surface_points"] = int_field("surface_points", REF(corpus.surface_points), 1);
    f["query_pairs"] = int_field("query_pairs", REF(corpus.query_pairs), 1);
    f["band_sd"] = real_field("band_sd", REF(corpus.band_sd));
    f["removal_radius"] = real_field("removal_radius", REF(corpus.partial.removal_radius));
    f["min_rate"] = real_field("min_rate", REF(corpus.partial.min_rate));
    f["partial_iterations"] = int_field("partial_iterations", REF(corpus.partial.iterations));
    f["partial_noise"] = real_field("partial_noise", REF(corpus.partial.noise_sd));
    // autoencoder
    f["latent_dim"] = int_field("latent_dim", REF(train.latent_dim), 1);
    f["feature_dim"] = int_field("feature_dim", REF(train.feature_dim), 1);
    f["levels"] = int_field("levels", REF(train.levels), 1);
    f["encoder_hidden"] = widths_field("encoder_hidden", REF(train.encoder_hidden));
    f["decoder_hidden"] = int_field("decoder_hidden", REF(train.decoder_hidden), 1);
    f["decoder_blocks"] = int_field("decoder_blocks", REF(train.decoder_blocks));
    f["beta"] = real_field("beta", REF(train.beta));
    f["ae_epochs"] = int_field("ae_epochs", REF(train.ae_epochs), 1);
    f["ae_lr"] = real_field("ae_lr", REF(train.ae_lr));
    f["ae_queries"] = int_field("ae_queries", REF(train.ae_queries));
    // kernel
    f["kernel_hidden"] = widths_field("kernel_hidden", REF(train.kernel_hidden));
    f["conditioned"] = bool_field("conditioned", REF(train.conditioned));
    f["radius"] = int_field("radius", REF(train.radius), 1);
    f["metric"] = {[](Settings& s, const std::string& v) {
                     if (v == "l1") s.train.metric = Metric::L1;
                     else if (v == "linf") s.train.metric = Metric::Linf;
                     else throw ConfigError("invalid value '" + v + "' for config key 'metric' (expected l1/linf)");
                   },
                   [](const Settings& s) { return std::string(s.train.metric == Metric::L1 ? "l1" : "linf"); }};
    f["gamma"] = real_field("gamma", REF(train.gamma));
    f["alpha0"] = real_field("alpha0", REF(train.alpha0));
    f["alpha1"] = real_field("alpha1", REF(train.alpha1));
    f["sigma_base"] = real_field("sigma_base", REF(train.sigma_base));
    f["sigma_decay"] = real_field("sigma_decay", REF(train.sigma_decay));
    f["kernel_epochs"] = int_field("kernel_epochs", REF(train.kernel_epochs), 1);
    f["kernel_lr"] = real_field("kernel_lr", REF(train.kernel_lr));
    f["batch_size"] = int_field("batch_size", REF(train.batch_size), 1);
    f["max_steps"] = int_field("max_steps", REF(train.max_steps));
    f["probe_every"] = int_field("probe_every", REF(train.probe_every));
    // sampling and evaluation
    f["steps"] = int_field("steps", REF(train.steps));
    f["mode_steps"] = int_field("mode_steps", REF(train.mode_steps));
    f["completions"] = int_field("completions", REF(train.completions), 1);
    f["upsample"] = int_field("upsample", REF(train.upsample), 1);
    f["tau"] = real_field("tau", REF(train.tau));
    f["iso"] = real_field("iso", REF(iso));
    // paths and command flags
    f["dataset"] = text_field(REF(dataset));
    f["ae_checkpoint"] = text_field(REF(ae_checkpoint));
    f["kernel_checkpoint"] = text_field(REF(kernel_checkpoint));
    f["out"] = text_field(REF(out));
    f["input"] = text_field(REF(input));
    f["input_id"] = int_field("input_id", REF(input_id));
    f["state"] = text_field(REF(state));
    f["threads"] = int_field("threads", REF(threads), 1);
    f["suites"] = text_field(REF(suites));
    f["convergence_pairs"] = int_field("convergence_pairs", REF(verify.convergence_pairs), 1);
    f["kl_trials"] = int_field("kl_trials", REF(verify.kl_trials), 1);
    f["final_trials"] = int_field("final_trials", REF(verify.final_trials), 1);
    f["gradient_seeds"] = int_field("gradient_seeds", REF(verify.gradient_seeds), 1);
    return f;
  }();
  return fields;
}

#undef REF

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::pair<std::string, std::string> split_pair(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

/// Ordered key=value assignments: config file first, then command-line flags.
using Assignments = std::vector<std::pair<std::string, std::string>>;

Assignments read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  Assignments out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    out.push_back(split_pair(t, path + ":" + std::to_string(number)));
  }
  return out;
}

Settings resolve(const Assignments& assignments) {
  const auto& fields = registry();
  for (const auto& [key, value] : assignments) {
    if (!fields.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  Settings s;
  // The profile resets every default, so it is applied before anything else.
  for (const auto& [key, value] : assignments) {
    if (key != "profile") continue;
    if (value == "desk") {
      s.train = desk_config();
      s.corpus = desk_corpus();
    } else if (value == "paper") {
      s.train = TrainConfig{};
      s.corpus = CorpusSpec{};
    } else {
      throw ConfigError("invalid value '" + value + "' for config key 'profile' (expected desk/paper)");
    }
    s.profile = value;
  }
  for (const auto& [key, value] : assignments) {
    if (key != "profile") fields.at(key).set(s, value);
  }
  if (const char* env = std::getenv("CGCA_SEED")) fields.at("seed").set(s, env);
  return s;
}

std::string echo(const Settings& s) {
  std::string text;
  for (const auto& [key, field] : registry()) text += key + "=" + field.get(s) + "\n";
  return text;
}

void prepare_out(const Settings& s) {
  fs::create_directories(s.out);
  std::ofstream os(fs::path(s.out) / "config.txt", std::ios::binary);
  os << echo(s);
  if (!os) fail(ErrorCode::IoError, "cannot write config echo in '" + s.out + "'");
}

void require(const std::string& value, const std::string& key) {
  if (value.empty()) throw ConfigError("config key '" + key + "' is required for this command");
}

template <typename Write>
void write_file(const fs::path& path, Write&& write) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  write(os);
  if (!os) fail(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

Dataset load_for(Settings& s) {
  require(s.dataset, "dataset");
  Dataset d = load_dataset(s.dataset);
  s.train.mode = d.mode;  // the dataset decides the field convention
  return d;
}

int cmd_gen_data(Settings& s) {
  prepare_out(s);
  const Dataset d = generate_dataset(s.corpus, s.train.seed);
  save_dataset(d, s.out);
  std::cout << "generated " << d.shapes.size() << " shapes (" << d.split(true).size() << " held out) in " << s.out
            << "\n";
  return 0;
}

int cmd_train_ae(Settings& s) {
  const Dataset d = load_for(s);
  prepare_out(s);
  const AeResult r = train_autoencoder(s.train, d);
  save_checkpoint((fs::path(s.out) / "ae.ckpt").string(), r.params);
  write_file(fs::path(s.out) / "ae_log.csv", [&](std::ostream& os) { write_ae_log(os, r.log); });
  const Autoencoder ae(s.train.autoencoder_spec());
  const double train_mae = autoencoder_mae(r.params, ae, d, d.split(false));
  const double test_mae = d.split(true).empty() ? 0.0 : autoencoder_mae(r.params, ae, d, d.split(true));
  write_file(fs::path(s.out) / "ae_metrics.txt", [&](std::ostream& os) {
    os << "train_mae=" << format_double(train_mae) << "\ntest_mae=" << format_double(test_mae) << "\n";
  });
  std::cout << "autoencoder: " << r.log.size() << " epochs, final loss " << r.log.back().loss << ", MAE train "
            << train_mae << " test " << test_mae << "\n";
  return 0;
}

ParamStore load_ae(const Settings& s) {
  require(s.ae_checkpoint, "ae_checkpoint");
  return load_checkpoint(s.ae_checkpoint);
}

ParamStore load_kernel(const Settings& s) {
  require(s.kernel_checkpoint, "kernel_checkpoint");
  return load_checkpoint(s.kernel_checkpoint);
}

int cmd_train_kernel(Settings& s) {
  const Dataset d = load_for(s);
  const ParamStore ae = load_ae(s);
  prepare_out(s);
  const KernelResult r = train_kernel(s.train, d, ae);
  save_checkpoint((fs::path(s.out) / "kernel.ckpt").string(), r.params);
  write_file(fs::path(s.out) / "kernel_log.csv", [&](std::ostream& os) { write_kernel_log(os, r.log); });
  const auto means = r.epoch_means();
  std::cout << "kernel: " << means.size() << " epochs, mean L_t " << means.front() << " -> " << means.back() << "\n";
  return 0;
}

int cmd_complete(Settings& s) {
  const ParamStore ae = load_ae(s);
  const ParamStore kernel = load_kernel(s);
  PointList partial;
  GridSpec grid = s.corpus.grid;
  if (!s.input.empty()) {
    partial = import_xyz(s.input);
  } else {
    const Dataset d = load_for(s);
    if (s.input_id >= d.shapes.size()) {
      throw ConfigError("input_id " + std::to_string(s.input_id) + " is out of range for the dataset");
    }
    partial = d.shapes[s.input_id].partial;
    grid = d.grid;
  }
  prepare_out(s);
  std::vector<PointList> clouds;
  for (int k = 0; k < s.train.completions; ++k) {
    const Completion c = complete_shape(s.train, kernel, ae, grid, partial, s.input_id, k);
    const std::string stem = "completion_" + std::to_string(k);
    save_state((fs::path(s.out) / (stem + "_state.csv")).string(), c.state);
    export_xyz(c.points, (fs::path(s.out) / (stem + ".xyz")).string());
    std::cout << stem << ": " << c.state.size() << " cells, " << c.points.size() << " points"
              << (c.died ? " (chain died, input returned)" : "") << "\n";
    clouds.push_back(c.points);
  }
  if (clouds.size() >= 2) {
    bool nonempty = true;
    for (const auto& c : clouds) nonempty = nonempty && !c.empty();
    if (nonempty) std::cout << "tmd " << tmd(clouds) << "\n";
  }
  return 0;
}

int cmd_mesh(Settings& s) {
  const ParamStore params = load_ae(s);
  require(s.state, "state");
  const SparseState state = load_state(s.state);
  prepare_out(s);
  AutoencoderSpec spec = s.train.autoencoder_spec();
  spec.latent_dim = state.latent_dim();
  const Autoencoder ae(spec);
  const ScalarField field = dense_query(params, ae, state, s.train.upsample);
  const Mesh mesh = marching_cubes(field, s.iso);
  export_obj(mesh, (fs::path(s.out) / "mesh.obj").string());
  std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles\n";
  return 0;
}

int cmd_eval(Settings& s) {
  const Dataset d = load_for(s);
  const ParamStore ae = load_ae(s);
  const ParamStore kernel = load_kernel(s);
  prepare_out(s);
  const EvalReport report = evaluate_checkpoint(s.train, kernel, ae, d, d.split(true));
  write_file(fs::path(s.out) / "eval.csv", [&](std::ostream& os) { write_eval_report(os, report); });
  std::cout << "eval: " << report.rows.size() << " inputs, mean min-CD " << report.mean_min_cd << ", mean TMD "
            << report.mean_tmd << ", MMD " << report.mmd << "\n";
  return 0;
}

int cmd_verify(Settings& s) {
  std::vector<std::string> suites;
  std::stringstream ss(s.suites);
  std::string name;
  while (std::getline(ss, name, ',')) {
    name = trim(name);
    if (name.empty()) continue;
    if (std::find(kVerifySuites.begin(), kVerifySuites.end(), name) == kVerifySuites.end()) {
      throw ConfigError("unknown verification suite '" + name + "' in config key 'suites'");
    }
    suites.push_back(name);
  }
  VerifyOptions options = s.verify;
  options.seed = s.train.seed;
  const auto results = run_verification(options, suites);
  prepare_out(s);
  std::ostringstream report;
  print_results(report, results);
  write_file(fs::path(s.out) / "verify.txt", [&](std::ostream& os) { os << report.str(); });
  std::cout << report.str();
  bool ok = true;
  for (const auto& r : results) ok = ok && r.passed;
  return ok ? 0 : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative cellular automata for sparse voxel shape completion"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> flags;
  int exit_code = 0;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(Settings&);
    std::vector<std::pair<const char*, const char*>> paths;  // flag, config key
  };
  const std::vector<Command> commands{
      {"gen-data", "Generate the toy corpus", cmd_gen_data, {}},
      {"train-ae", "Train the autoencoder", cmd_train_ae, {{"--dataset", "dataset"}}},
      {"train-kernel",
       "Train the transition kernel",
       cmd_train_kernel,
       {{"--dataset", "dataset"}, {"--ae", "ae_checkpoint"}}},
      {"complete",
       "Complete a partial point cloud",
       cmd_complete,
       {{"--dataset", "dataset"},
        {"--ae", "ae_checkpoint"},
        {"--kernel", "kernel_checkpoint"},
        {"--input", "input"},
        {"--input-id", "input_id"}}},
      {"mesh", "Mesh a state with the decoder", cmd_mesh, {{"--ae", "ae_checkpoint"}, {"--state", "state"}}},
      {"eval",
       "Evaluate a kernel on held-out partials",
       cmd_eval,
       {{"--dataset", "dataset"}, {"--ae", "ae_checkpoint"}, {"--kernel", "kernel_checkpoint"}}},
      {"verify", "Run the property suites", cmd_verify, {}},
  };

  std::map<CLI::App*, const Command*> by_app;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "Plain-text key=value config file");
    sub->add_option("--set", overrides, "Override one config key (key=value), repeatable");
    sub->add_option("--out", flags["out"], "Output directory");
    sub->add_option("--threads", flags["threads"], "Worker cap (the pipeline is single-threaded)");
    for (const auto& [flag, key] : c.paths) sub->add_option(flag, flags[key], std::string("Sets ") + key);
    by_app[sub] = &c;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    Assignments assignments;
    if (!config_path.empty()) assignments = read_config_file(config_path);
    for (const std::string& o : overrides) assignments.push_back(split_pair(o, "--set"));
    for (const auto& [key, value] : flags)
      if (!value.empty()) assignments.emplace_back(key, value);
    Settings settings = resolve(assignments);
    for (const auto& [sub, command] : by_app)
      if (sub->parsed()) exit_code = command->run(settings);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return exit_code;
}
