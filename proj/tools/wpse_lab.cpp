// wpse-lab: experiment runner for weighted point set embeddings on discrete worlds.

#include "wpse/wpse.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>
#include <toml.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wpse;

namespace {

// Exit codes
constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitError = 2;

// Hashing ---------------------------------------------------------------------

std::string hex(const unsigned char* p, unsigned n) {
    std::ostringstream os;
    for (unsigned i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(p[i]);
    return os.str();
}

/// SHA-1 of "blob <size>\0<content>", as computed by `git hash-object`.
std::string git_blob_hash(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, content.data(), content.size());
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    return hex(md, len);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InvalidInput("cannot read '" + p.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InvalidInput("cannot write '" + p.string() + "'");
    out << content;
    if (!out) throw InvalidInput("write failed for '" + p.string() + "'");
}

std::string csv_header() { return std::string("# wpse-lab v") + kVersion + "\n"; }

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

// Threads ---------------------------------------------------------------------

unsigned thread_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("WPSE_LAB_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) throw InvalidInput("WPSE_LAB_THREADS must be a positive integer");
        n = static_cast<unsigned>(v);
    }
    return n;
}

/// Runs fn(i) for i in [0, n) on up to thread_count() workers. Results are
/// written by index, so aggregation order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::uint64_t trial_seed(std::uint64_t base, std::uint64_t salt, std::size_t trial) {
    return detail::splitmix64(detail::splitmix64(base ^ salt) + trial);
}

// Parameters --------------------------------------------------------------------

/// Options that can come from flags or from a --config JSON file. Flags win;
/// config keys must name a known option.
class Params {
public:
    explicit Params(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "TOML (or .json) file with option values, keys as in config.json");
    }

    template <typename T>
    CLI::Option* add(const std::string& flags, const std::string& key, T& var, const std::string& desc) {
        CLI::Option* opt = app_->add_option(flags, var, desc)->capture_default_str();
        entries_.push_back({key, opt, [&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); }});
        return opt;
    }

    CLI::Option* flag(const std::string& flags, const std::string& key, bool& var, const std::string& desc) {
        CLI::Option* opt = app_->add_flag(flags, var, desc);
        entries_.push_back({key, opt, [&var](const json& j) { var = j.get<bool>(); }, [&var] { return json(var); }});
        return opt;
    }

    void apply_config() {
        if (config_path_.empty()) return;
        json cfg;
        try {
            const std::string text = read_file(config_path_);
            if (fs::path(config_path_).extension() == ".json") {
                cfg = json::parse(text);
            } else {
                std::ostringstream os;
                os << toml::json_formatter{toml::parse(text, config_path_)};
                cfg = json::parse(os.str());
            }
        } catch (const json::exception& e) {
            throw InvalidInput("config '" + config_path_ + "': " + e.what());
        } catch (const toml::parse_error& e) {
            std::ostringstream os;
            os << "config '" << config_path_ << "': " << e.description() << " at line " << e.source().begin.line;
            throw InvalidInput(os.str());
        }
        if (!cfg.is_object()) throw InvalidInput("config '" + config_path_ + "': expected a table of options");
        for (const auto& [key, value] : cfg.items()) {
            auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
            if (it == entries_.end()) throw InvalidInput("config '" + config_path_ + "': unknown key '" + key + "'");
            if (it->opt->count() > 0) continue;
            try {
                it->load(value);
            } catch (const json::exception& e) {
                throw InvalidInput("config '" + config_path_ + "': bad value for '" + key + "': " + e.what());
            }
        }
    }

    json effective() const {
        json j = json::object();
        for (const auto& e : entries_) j[e.key] = e.dump();
        return j;
    }

    bool given(const std::string& key) const {
        for (const auto& e : entries_)
            if (e.key == key) return e.opt->count() > 0;
        return false;
    }

private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> load;
        std::function<json()> dump;
    };
    CLI::App* app_;
    std::string config_path_;
    std::vector<Entry> entries_;
};

// Run directories -------------------------------------------------------------

class RunDir {
public:
    RunDir(const std::string& root, const std::string& command, const json& config, const std::string& name)
        : command_(command), config_(config) {
        config_text_ = config_.dump(2) + "\n";
        config_hash_ = git_blob_hash(config_text_);
        path_ = fs::path(root) / (name.empty() ? command + "-" + config_hash_.substr(0, 12) : name);
        fs::create_directories(path_);
        put("config.json", config_text_);
    }

    const fs::path& path() const { return path_; }

    void put(const std::string& name, const std::string& content) {
        write_file(path_ / name, content);
        files_[name] = git_blob_hash(content);
    }

    void finish(bool passed) {
        json files = json::object();
        for (const auto& [k, v] : files_) files[k] = v;
        const json manifest = {{"tool", "wpse-lab"},
                               {"version", kVersion},
                               {"command", command_},
                               {"config", config_},
                               {"config_hash", config_hash_},
                               {"passed", passed},
                               {"files", files}};
        write_file(path_ / "manifest.json", manifest.dump(2) + "\n");
    }

private:
    std::string command_;
    json config_;
    std::string config_text_;
    std::string config_hash_;
    fs::path path_;
    std::map<std::string, std::string> files_;
};

// World options shared by several commands --------------------------------------

struct WorldOptions {
    std::string file;
    GeneratorConfig gen = [] {
        GeneratorConfig g;
        g.n_x = 8;
        g.n_y = 8;
        g.num_labels = 4;
        g.noise = 0.5;
        g.floor = 1e-3;
        return g;
    }();

    void add(Params& p, const std::string& seed_flags = "--world-seed") {
        p.add("--world", "world", file, "world file (overrides generation options)");
        p.add("--nx", "nx", gen.n_x, "number of x values")->check(CLI::PositiveNumber);
        p.add("--ny", "ny", gen.n_y, "number of y values")->check(CLI::PositiveNumber);
        p.add("--k", "k", gen.num_labels, "number of labels")->check(CLI::PositiveNumber);
        p.add(seed_flags, "world_seed", gen.seed, "generator seed");
        p.add("--concentration", "concentration", gen.concentration, "Dirichlet concentration");
        p.add("--floor", "floor", gen.floor, "mass added to every joint cell");
        p.add("--noise", "noise", gen.noise, "weight of unstructured p(y|x)");
        p.flag("--deterministic-labels", "deterministic_labels", gen.deterministic_labels, "one label per x");
        p.flag("--uniform-x", "uniform_x", gen.uniform_x, "uniform p(x)");
        p.flag("--independent", "independent", gen.independent, "product of marginals");
    }

    GeneratedWorld load() const { return file.empty() ? random_world(gen) : load_world(file); }
};

// Kernel options ---------------------------------------------------------------

struct KernelOptions {
    std::string kind = "combination";
    std::string nonlinear = "gaussian";
    double sigma = 1.0;
    double c = 1.0;
    double alpha1 = 0.5;
    double alpha2 = 0.5;

    void add(Params& p) {
        p.add("--kernel", "kernel", kind, "linear | gaussian | imq | combination")
            ->check(CLI::IsMember({"linear", "gaussian", "imq", "combination"}));
        p.add("--nonlinear", "nonlinear", nonlinear, "nonlinear part of a combination: gaussian | imq")
            ->check(CLI::IsMember({"gaussian", "imq"}));
        p.add("--sigma", "sigma", sigma, "Gaussian bandwidth");
        p.add("--c", "c", c, "IMQ scale");
        p.add("--alpha1", "alpha1", alpha1, "linear weight of a combination");
        p.add("--alpha2", "alpha2", alpha2, "nonlinear weight of a combination");
    }

    KernelSpec to_kernel() const {
        if (kind == "linear") return KernelSpec::linear();
        if (kind == "gaussian") return KernelSpec::gaussian(sigma);
        if (kind == "imq") return KernelSpec::imq(c);
        const ShiftInvariantKernel nl = nonlinear == "imq" ? ShiftInvariantKernel(ImqKernel{c})
                                                           : ShiftInvariantKernel(GaussianKernel{sigma});
        return KernelSpec::combination(alpha1, alpha2, nl);
    }
};

// Check bookkeeping --------------------------------------------------------------

struct CheckRow {
    std::string suite;
    std::size_t trial = 0;
    double lhs = 0.0;
    double rhs = 0.0;
    bool passed = true;
    std::string note;
};

CheckRow check(double lhs, double rhs, bool passed, std::string note = {}) {
    return {"", 0, lhs, rhs, passed, std::move(note)};
}

struct SuiteSummary {
    std::string name;
    std::size_t trials = 0;
    std::size_t failures = 0;
    double min_slack = std::numeric_limits<double>::infinity();
};

std::vector<SuiteSummary> summarize(const std::vector<CheckRow>& rows) {
    std::vector<SuiteSummary> out;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SuiteSummary& s) { return s.name == r.suite; });
        if (it == out.end()) {
            out.push_back({r.suite});
            it = out.end() - 1;
        }
        ++it->trials;
        if (!r.passed) ++it->failures;
        it->min_slack = std::min(it->min_slack, r.rhs - r.lhs);
    }
    return out;
}

std::string checks_csv(const std::vector<CheckRow>& rows) {
    std::ostringstream os;
    os << csv_header() << "suite,trial,lhs,rhs,slack,passed,note\n";
    for (const auto& r : rows)
        os << r.suite << ',' << r.trial << ',' << num(r.lhs) << ',' << num(r.rhs) << ',' << num(r.rhs - r.lhs) << ','
           << (r.passed ? 1 : 0) << ',' << r.note << '\n';
    return os.str();
}

json suites_json(const std::vector<SuiteSummary>& s) {
    json arr = json::array();
    for (const auto& x : s)
        arr.push_back({{"suite", x.name},
                       {"trials", x.trials},
                       {"failures", x.failures},
                       {"passed", x.failures == 0},
                       {"min_slack", x.min_slack}});
    return arr;
}

bool print_suites(const std::vector<SuiteSummary>& s) {
    bool ok = true;
    for (const auto& x : s) {
        std::printf("%-12s %s  trials=%zu failures=%zu min_slack=%.3e\n", x.name.c_str(),
                    x.failures == 0 ? "PASS" : "FAIL", x.trials, x.failures, x.min_slack);
        ok = ok && x.failures == 0;
    }
    return ok;
}

// gen-world -----------------------------------------------------------------------

int cmd_gen_world(const WorldOptions& w, const std::string& output) {
    const GeneratedWorld g = w.load();
    const std::string text = world_to_json(g).dump() + "\n";
    if (!output.empty()) write_file(output, text);
    const KlTerms kl = kl_terms(g.world, g.partition);
    std::printf("n_x=%ld n_y=%ld K=%ld\n", static_cast<long>(g.world.n_x()), static_cast<long>(g.world.n_y()),
                static_cast<long>(g.world.num_labels()));
    std::printf("I(X;Y)=%.17g\n", mutual_information(g.world));
    std::printf("eps1_expected=%.17g eps2_expected=%.17g eps1_sup=%.17g eps2_sup=%.17g\n", kl.eps1_expected,
                kl.eps2_expected, kl.eps1_sup, kl.eps2_sup);
    if (output.empty()) std::fwrite(text.data(), 1, text.size(), stdout);
    return kExitOk;
}

// verify-bounds ----------------------------------------------------------------------

struct VerifyOptions {
    std::string suites = "pmi-optimum,lower-bound,mean-classifier,perturbation,probe";
    std::size_t worlds = 100;
    Index max_n = 50;
    std::size_t tables = 1000;
    std::size_t perturbations = 1000;
    std::vector<double> perturb = {0.1, 0.5, 2.0};
    std::size_t models = 6;
    long train_steps = 800;
    std::uint64_t seed = 0;
};

GeneratorConfig random_generator(std::uint64_t seed, Index max_n) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> size(2, std::max<Index>(2, max_n));
    GeneratorConfig g;
    g.seed = seed;
    g.n_x = size(rng);
    g.n_y = size(rng);
    g.num_labels = std::uniform_int_distribution<Index>(2, std::min<Index>(g.n_y, 5))(rng);
    g.noise = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double conc[] = {0.3, 1.0, 3.0};
    g.concentration = conc[std::uniform_int_distribution<int>(0, 2)(rng)];
    return g;
}

std::vector<CheckRow> verify_suites(const VerifyOptions& o, const std::optional<GeneratedWorld>& fixed) {
    std::set<std::string> wanted;
    {
        std::stringstream ss(o.suites);
        for (std::string s; std::getline(ss, s, ',');) {
            if (s != "pmi-optimum" && s != "lower-bound" && s != "mean-classifier" && s != "perturbation" && s != "probe")
                throw InvalidInput("verify-bounds: unknown suite '" + s + "'");
            wanted.insert(s);
        }
    }
    auto world_for = [&](std::uint64_t salt, std::size_t trial) {
        if (fixed) return *fixed;
        return random_world(random_generator(trial_seed(o.seed, salt, trial), o.max_n));
    };
    std::vector<CheckRow> rows;
    auto run = [&](const std::string& name, std::size_t n, const std::function<CheckRow(std::size_t)>& fn) {
        std::vector<CheckRow> part(n);
        parallel_for(n, [&](std::size_t i) {
            part[i] = fn(i);
            part[i].suite = name;
            part[i].trial = i;
        });
        rows.insert(rows.end(), part.begin(), part.end());
    };

    if (wanted.count("pmi-optimum"))
        run("pmi-optimum", fixed ? 1 : o.worlds, [&](std::size_t i) {
            const auto g = world_for(1, i);
            const double gap = std::abs(population_loss(pmi(g.world), g.world) + mutual_information(g.world));
            return check(gap, 1e-10, gap < 1e-10);
        });

    if (wanted.count("lower-bound"))
        run("lower-bound", o.tables, [&](std::size_t i) {
            const auto g = world_for(2, i);
            std::mt19937_64 rng(trial_seed(o.seed, 3, i));
            std::normal_distribution<double> n(0.0, std::uniform_real_distribution<double>(0.01, 5.0)(rng));
            Matrix t = i % 2 ? pmi(g.world).values : Matrix::Zero(g.world.n_x(), g.world.n_y());
            for (Index k = 0; k < t.size(); ++k) t.data()[k] += n(rng);
            const double lhs = -mutual_information(g.world) - 1e-12;
            const double loss = population_loss(SimilarityTable(t), g.world);
            return check(lhs, loss, loss >= lhs);
        });

    if (wanted.count("mean-classifier")) {
        run("mean-classifier", fixed ? 1 : o.worlds, [&](std::size_t i) {
            const auto g = world_for(4, i);
            const auto part = fixed ? g.partition
                                    : random_partition(g.world.n_y(), static_cast<int>(g.world.num_labels()),
                                                       trial_seed(o.seed, 5, i), 0.2);
            const auto r = excess_risk(pmi(g.world), g.world, part);
            return check(r.lhs, r.rhs_expected + 1e-10, r.lhs >= -1e-12 && r.lhs <= r.rhs_expected + 1e-10);
        });
        if (!fixed)
            run("mean-classifier-exact", o.worlds, [&](std::size_t i) {
                auto gen = random_generator(trial_seed(o.seed, 6, i), o.max_n);
                gen.noise = 0.0;
                gen.floor = 0.0;
                gen.concentration = 1.0;
                const auto g = random_world(gen);
                const double lhs = excess_risk(pmi(g.world), g.world, g.partition).lhs;
                return check(std::abs(lhs), 1e-10, std::abs(lhs) < 1e-10);
            });
    }

    if (wanted.count("perturbation"))
        for (double delta : o.perturb) {
            detail::require(delta >= 0.0, "verify-bounds: perturbation size must be nonnegative");
            run("perturbation@" + (std::ostringstream() << delta).str(), o.perturbations, [&, delta](std::size_t i) {
                const auto g = world_for(7, i % std::max<std::size_t>(1, o.worlds));
                std::mt19937_64 rng(trial_seed(o.seed, 8, i));
                std::uniform_real_distribution<double> u(-delta, delta);
                const SimilarityTable star = pmi(g.world);
                Matrix e(star.rows(), star.cols());
                for (Index k = 0; k < e.size(); ++k) e.data()[k] = u(rng);
                e.data()[std::uniform_int_distribution<Index>(0, e.size() - 1)(rng)] = (i % 2 ? delta : -delta);
                const double base = sup_loss(mean_classifier(star, g.world, g.partition), g.world);
                const double pert =
                    sup_loss(mean_classifier(SimilarityTable(star.values + e), g.world, g.partition), g.world);
                const double change = std::abs(pert - base);
                return check(change, 2.0 * delta + 1e-10, change <= 2.0 * delta + 1e-10);
            });
        }

    if (wanted.count("probe"))
        run("probe", o.models, [&](std::size_t i) {
            GeneratedWorld g;
            if (fixed) {
                g = *fixed;
            } else {
                auto gen = random_generator(trial_seed(o.seed, 9, i), 8);
                gen.n_x = std::max<Index>(gen.n_x, 4);
                gen.n_y = std::max<Index>(gen.n_y, 4);
                gen.floor = 1e-3;
                g = random_world(gen);
            }
            TrainConfig cfg;
            switch (i % 4) {
                case 0: cfg = TrainConfig::baseline(2); break;
                case 1: break;
                case 2: cfg.kernel = KernelSpec::combination(0.4, 0.6, ImqKernel{0.75}); break;
                default:
                    cfg.mode.kind = SimilarityMode::Rff;
                    cfg.mode.num_features = 128;
                    break;
            }
            cfg.steps = o.train_steps;
            cfg.seed = trial_seed(o.seed, 10, i);
            cfg.grad_check = false;
            const auto fitted = fit(g.world, g.partition, cfg);
            const auto probe = fit_linear_probe(fitted.table.values, g.world);
            const double excess = probe.loss - sup_loss_optimal(g.world);
            const auto& ex = fitted.report.excess;
            const double rhs = ex.kl.eps1_sup + ex.kl.eps2_sup + 2.0 * ex.delta + 1e-5;
            return check(excess, rhs, excess <= rhs, fitted.model.kernel.name() == "{\"kind\":\"linear\"}" ? "baseline" : "wpse");
        });
    return rows;
}

int cmd_verify_bounds(const VerifyOptions& o, const WorldOptions& w, RunDir& run) {
    std::optional<GeneratedWorld> fixed;
    if (!w.file.empty()) fixed = load_world(w.file);
    const auto rows = verify_suites(o, fixed);
    const auto suites = summarize(rows);
    const bool ok = print_suites(suites);
    run.put("checks.csv", checks_csv(rows));
    run.put("report.json", json({{"passed", ok}, {"suites", suites_json(suites)}}).dump(2) + "\n");
    run.finish(ok);
    if (!ok) {
        std::fprintf(stderr, "failed checks:\n");
        for (const auto& r : rows)
            if (!r.passed)
                std::fprintf(stderr, "  %s trial %zu: lhs=%.17g rhs=%.17g\n", r.suite.c_str(), r.trial, r.lhs, r.rhs);
    }
    return ok ? kExitOk : kExitCheckFailed;
}

// train --------------------------------------------------------------------------

struct TrainOptions {
    bool baseline = false;
    bool wpse = false;
    double lr = 0.1;
    double momentum = 0.9;
    long steps = 3000;
    std::uint64_t seed = 0;
    Index m = 4;
    Index d = 2;
    std::string mode = "exact";
    Index features = kDefaultTrainFeatures;
    Index eval_features = kDefaultEvalFeatures;
    bool fixed_features = false;
    Index batch = 0;
    double init_inv_temperature = 10.0;

    void add(Params& p) {
        p.flag("--baseline", "baseline", baseline, "one unit point per instance, linear kernel, unit weights");
        p.flag("--wpse", "wpse", wpse, "weighted point sets (default)");
        p.add("--lr", "lr", lr, "learning rate")->check(CLI::PositiveNumber);
        p.add("--momentum", "momentum", momentum, "momentum in [0, 1)");
        p.add("--steps", "steps", steps, "optimizer steps")->check(CLI::PositiveNumber);
        p.add("--seed", "seed", seed, "training seed");
        p.add("--m", "m", m, "points per instance")->check(CLI::PositiveNumber);
        p.add("--d", "d", d, "point dimension")->check(CLI::PositiveNumber);
        p.add("--mode", "mode", mode, "exact | rff")->check(CLI::IsMember({"exact", "rff"}));
        p.add("--D", "D", features, "training RFF dimension")->check(CLI::PositiveNumber);
        p.add("--eval-D", "eval_D", eval_features, "evaluation RFF dimension")->check(CLI::PositiveNumber);
        p.flag("--fixed-features", "fixed_features", fixed_features, "keep one RFF draw for all steps");
        p.add("--batch", "batch", batch, "minibatch size (0: population objective)");
        p.add("--init-inv-temperature", "init_inv_temperature", init_inv_temperature, "initial 1/tau");
    }

    TrainConfig config(const KernelOptions& k) const {
        if (baseline && wpse) throw InvalidInput("train: --baseline and --wpse are exclusive");
        TrainConfig c = baseline ? TrainConfig::baseline(d) : TrainConfig{};
        if (!baseline) {
            c.kernel = k.to_kernel();
            c.m_x = c.m_y = m;
            c.d = d;
        }
        c.learning_rate = lr;
        c.momentum = momentum;
        c.steps = steps;
        c.seed = seed;
        c.mode.kind = mode == "rff" ? SimilarityMode::Rff : SimilarityMode::Exact;
        c.mode.num_features = features;
        c.mode.resample = fixed_features ? ResampleMode::Fixed : ResampleMode::PerStep;
        c.eval_features = eval_features;
        c.batch_size = batch;
        c.init_inv_temperature = init_inv_temperature;
        validate(c);
        return c;
    }
};

int cmd_train(const TrainOptions& o, const KernelOptions& k, const WorldOptions& w, RunDir& run) {
    const GeneratedWorld g = w.load();
    const TrainConfig cfg = o.config(k);
    const FitResult r = fit(g.world, g.partition, cfg);

    std::ostringstream trace;
    trace << csv_header() << "step,loss\n";
    for (std::size_t s = 0; s < r.report.loss_trace.size(); ++s)
        trace << s * static_cast<std::size_t>(cfg.trace_every) << ',' << num(r.report.loss_trace[s]) << '\n';
    std::ostringstream table;
    const SimilarityTable star = pmi(g.world);
    table << csv_header() << "x,y,g,pmi\n";
    for (Index i = 0; i < r.table.rows(); ++i)
        for (Index j = 0; j < r.table.cols(); ++j)
            table << i << ',' << j << ',' << num(r.table(i, j)) << ',' << num(star(i, j)) << '\n';

    json report = r.report;
    report["model"] = o.baseline ? "baseline" : "wpse";
    report["train_config"] = cfg;
    report["mutual_information"] = mutual_information(g.world);
    report["effective_rank"] = effective_rank(star);
    run.put("report.json", report.dump(2) + "\n");
    run.put("trace.csv", trace.str());
    run.put("table.csv", table.str());
    run.put("model.json", json(r.model).dump() + "\n");
    run.put("world.json", world_to_json(g).dump() + "\n");
    run.finish(true);

    std::printf("model=%s final_loss=%.10g optimum=%.10g delta=%.6g excess=%.6g rhs_sup=%.6g theta=%.4g\n",
                o.baseline ? "baseline" : "wpse", r.report.final_loss, r.report.optimum, r.report.delta,
                r.report.excess.lhs, r.report.excess.rhs_sup, r.model.inv_temperature);
    std::printf("run=%s\n", run.path().string().c_str());
    return kExitOk;
}

// rank ----------------------------------------------------------------------------

struct RankOptions {
    Index d = 2;
    Index n = 0;
    std::size_t trials = 1000;
    std::uint64_t seed = 0;
    bool floor = false;
};

int cmd_rank(const RankOptions& o, const WorldOptions& w, RunDir& run) {
    detail::require(o.d >= 1, "rank: d must be >= 1");
    detail::require(o.n == 0 || o.n > o.d + 1, "rank: need n > d + 1");
    struct Row {
        Index n;
        double c, ratio;
        bool ok;
    };
    std::vector<Row> rows(o.trials);
    parallel_for(o.trials, [&](std::size_t t) {
        std::mt19937_64 rng(trial_seed(o.seed, 11, t));
        const Index n = o.n > 0 ? o.n : std::uniform_int_distribution<Index>(o.d + 2, std::max<Index>(o.d + 2, 20))(rng);
        std::normal_distribution<double> nd(0.0, 1.0);
        Matrix A(o.d, n), B(o.d, n);
        for (Index k = 0; k < A.size(); ++k) A.data()[k] = nd(rng);
        for (Index k = 0; k < B.size(); ++k) B.data()[k] = nd(rng);
        const double c = 3.0 * nd(rng);
        const auto r = verify_rank_bound(A, B, c);
        rows[t] = {n, c, r.singular_values[static_cast<std::size_t>(o.d + 1)] / r.singular_values[0], r.rank_bound_ok};
    });
    std::ostringstream csv;
    csv << csv_header() << "trial,d,n,c,sigma_ratio,passed\n";
    std::size_t failures = 0;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        csv << t << ',' << o.d << ',' << rows[t].n << ',' << num(rows[t].c) << ',' << num(rows[t].ratio) << ','
            << (rows[t].ok ? 1 : 0) << '\n';
        failures += rows[t].ok ? 0 : 1;
    }
    json summary = {{"d", o.d}, {"trials", o.trials}, {"failures", failures}, {"passed", failures == 0}};
    if (o.floor) {
        const GeneratedWorld g = w.load();
        const SimilarityTable G = pmi(g.world);
        summary["pmi_effective_rank"] = effective_rank(G);
        summary["bilinear_fit_floor"] = bilinear_fit_floor(G, o.d);
        summary["bilinear_constant_floor"] = bilinear_constant_floor(G, o.d);
        std::printf("pmi floor (d=%ld): rank<=d+1 %.6g, bilinear+constant %.6g\n", static_cast<long>(o.d),
                    summary["bilinear_fit_floor"].get<double>(), summary["bilinear_constant_floor"].get<double>());
    }
    run.put("rank.csv", csv.str());
    run.put("summary.json", summary.dump(2) + "\n");
    run.finish(failures == 0);
    std::printf("rank d=%ld trials=%zu failures=%zu %s\n", static_cast<long>(o.d), o.trials, failures,
                failures == 0 ? "PASS" : "FAIL");
    return failures == 0 ? kExitOk : kExitCheckFailed;
}

// sweep ---------------------------------------------------------------------------

struct SweepOptions {
    std::vector<Index> m_values = {1, 2, 4, 8};
    Index d = 2;
    int restarts = 5;
    long steps = 10000;
    double lr = 0.01;
    std::uint64_t seed = 0;
    bool check = false;
};

SweepResult parallel_sweep(const SimilarityTable& G, const KernelSpec& k, const std::vector<Index>& ms, Index d,
                           const SweepConfig& cfg) {
    std::vector<std::pair<Index, int>> jobs;
    for (Index m : ms) {
        detail::require(m >= 1, "sweep: M must be >= 1");
        for (int r = 0; r < cfg.restarts; ++r) jobs.emplace_back(m, r);
    }
    SweepResult res;
    res.points.resize(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        const auto [m, r] = jobs[i];
        res.points[i] = fit_to_table(G, k, m, d, cfg.optimizer, sweep_seed(cfg.optimizer.seed, m, r));
        res.points[i].restart = r;
    });
    return res;
}

int cmd_sweep(const SweepOptions& o, const KernelOptions& k, const WorldOptions& w, RunDir& run) {
    detail::require(o.restarts >= 1, "sweep: need at least one restart");
    const GeneratedWorld g = w.load();
    const SimilarityTable G = pmi(g.world);
    SweepConfig cfg;
    cfg.restarts = o.restarts;
    cfg.optimizer.steps = o.steps;
    cfg.optimizer.learning_rate = o.lr;
    cfg.optimizer.seed = o.seed;
    const KernelSpec kernel = k.to_kernel();
    const SweepResult curve = parallel_sweep(G, kernel, o.m_values, o.d, cfg);
    const SweepResult linear = parallel_sweep(G, KernelSpec::linear(), {1}, o.d, cfg);

    json medians = json::object();
    bool monotone = true;
    double prev = std::numeric_limits<double>::infinity();
    for (Index m : o.m_values) {
        const double med = median(curve.sup_errors(m));
        medians[std::to_string(m)] = med;
        monotone = monotone && med <= prev;
        prev = med;
        std::printf("M=%-3ld median sup error %.6g  best %.6g  median frobenius %.6g\n", static_cast<long>(m), med,
                    best(curve.sup_errors(m)), median(curve.frobenius_errors(m)));
    }
    const double linear_median = median(linear.sup_errors(1));
    const double ratio = linear_median / prev;
    std::printf("linear M=1 median sup error %.6g; ratio to largest M %.3g\n", linear_median, ratio);

    const bool ok = !o.check || (monotone && ratio >= 2.0);
    json summary = {{"kernel", kernel},
                    {"median_sup_error", medians},
                    {"linear_median_sup_error", linear_median},
                    {"linear_ratio", ratio},
                    {"monotone", monotone},
                    {"bilinear_fit_floor", o.d + 1 < std::min(G.rows(), G.cols()) ? json(bilinear_fit_floor(G, o.d)) : json()},
                    {"checked", o.check},
                    {"passed", ok}};
    run.put("sweep.csv", sweep_csv(curve));
    run.put("sweep_linear.csv", sweep_csv(linear));
    run.put("summary.json", summary.dump(2) + "\n");
    run.finish(ok);
    if (o.check) std::printf("%s\n", ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitCheckFailed;
}

// rff-test ------------------------------------------------------------------------

struct RffOptions {
    Index d = 8;
    Index D = 1024;
    std::size_t pairs = 100;
    std::size_t seeds = 200;
    std::size_t variance_seeds = 500;
    double tol = 0.01;
    std::uint64_t seed = 0;
};

int cmd_rff_test(const RffOptions& o, const KernelOptions& k, RunDir& run) {
    const KernelSpec kernel = k.kind == "imq" ? KernelSpec::imq(k.c) : KernelSpec::gaussian(k.sigma);
    if (k.kind != "gaussian" && k.kind != "imq") throw InvalidInput("rff-test: --kernel must be gaussian or imq");
    detail::require(o.seeds >= 2 && o.variance_seeds >= 2, "rff-test: need at least two seeds");
    detail::require(o.D >= 4, "rff-test: D must be >= 4");

    std::mt19937_64 rng(trial_seed(o.seed, 12, 0));
    std::vector<Vector> us, vs;
    for (std::size_t p = 0; p < o.pairs; ++p) {
        std::normal_distribution<double> n(0.0, 1.0);
        Vector u(o.d), v(o.d);
        for (Index i = 0; i < o.d; ++i) u[i] = n(rng);
        for (Index i = 0; i < o.d; ++i) v[i] = n(rng);
        us.push_back(u / u.norm());
        vs.push_back(v / v.norm());
    }
    Matrix est(static_cast<Index>(o.pairs), static_cast<Index>(o.seeds));
    parallel_for(o.seeds, [&](std::size_t s) {
        const RFFParams params = spectral_sample(kernel, o.d, o.D, trial_seed(o.seed, 13, s));
        for (std::size_t p = 0; p < o.pairs; ++p)
            est(static_cast<Index>(p), static_cast<Index>(s)) = estimate_kernel(params, us[p], vs[p]);
    });

    std::ostringstream csv;
    csv << csv_header() << "pair,exact,mean,std_error,abs_error,passed\n";
    std::size_t failures = 0;
    double worst = 0.0;
    const double ns = static_cast<double>(o.seeds);
    for (std::size_t p = 0; p < o.pairs; ++p) {
        const auto row = est.row(static_cast<Index>(p));
        const double mean = row.mean();
        const double sd = std::sqrt((row.array() - mean).square().sum() / (ns - 1.0));
        const double se = sd / std::sqrt(ns);
        const double exact = eval(kernel, us[p], vs[p]);
        const double err = std::abs(mean - exact);
        const bool ok = err <= o.tol && err <= 4.0 * se;
        worst = std::max(worst, err);
        failures += ok ? 0 : 1;
        csv << p << ',' << num(exact) << ',' << num(mean) << ',' << num(se) << ',' << num(err) << ',' << (ok ? 1 : 0)
            << '\n';
    }

    // variance at D/4 against D on the first pair
    auto variance = [&](Index D, std::uint64_t salt) {
        std::vector<double> xs(o.variance_seeds);
        parallel_for(o.variance_seeds, [&](std::size_t s) {
            xs[s] = estimate_kernel(spectral_sample(kernel, o.d, D, trial_seed(o.seed, salt, s)), us[0], vs[0]);
        });
        double m = 0.0, v = 0.0;
        for (double x : xs) m += x;
        m /= static_cast<double>(xs.size());
        for (double x : xs) v += (x - m) * (x - m);
        return v / static_cast<double>(xs.size() - 1);
    };
    const double ratio = variance(o.D / 4, 14) / variance(o.D, 15);
    const bool variance_ok = ratio >= 2.5 && ratio <= 5.5;
    const bool ok = failures == 0 && variance_ok;

    const json summary = {{"kernel", kernel},
                          {"d", o.d},
                          {"D", o.D},
                          {"pairs", o.pairs},
                          {"seeds", o.seeds},
                          {"max_abs_error", worst},
                          {"unbiasedness_failures", failures},
                          {"variance_ratio", ratio},
                          {"variance_ok", variance_ok},
                          {"passed", ok}};
    run.put("rff.csv", csv.str());
    run.put("summary.json", summary.dump(2) + "\n");
    run.finish(ok);
    std::printf("unbiasedness %s (max |error| %.4g over %zu pairs)\n", failures == 0 ? "PASS" : "FAIL", worst, o.pairs);
    std::printf("variance ratio D/4 vs D = %.3f %s\n", ratio, variance_ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitCheckFailed;
}

// report --------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& dirs, bool as_json) {
    bool all_ok = true;
    json out = json::array();
    for (const auto& d : dirs) {
        const json manifest = json::parse(read_file(fs::path(d) / "manifest.json"));
        bool intact = true;
        std::vector<std::string> bad;
        for (const auto& [name, hash] : manifest.at("files").items()) {
            const fs::path p = fs::path(d) / name;
            if (!fs::exists(p) || git_blob_hash(read_file(p)) != hash.get<std::string>()) {
                intact = false;
                bad.push_back(name);
            }
        }
        const bool passed = manifest.value("passed", false);
        all_ok = all_ok && intact && passed;
        json entry = {{"run", d},
                      {"command", manifest.at("command")},
                      {"config_hash", manifest.at("config_hash")},
                      {"passed", passed},
                      {"intact", intact},
                      {"modified_files", bad}};
        for (const char* f : {"summary.json", "report.json"})
            if (fs::exists(fs::path(d) / f)) entry["result"] = json::parse(read_file(fs::path(d) / f));
        out.push_back(entry);
        if (!as_json)
            std::printf("%-40s %-14s %s %s%s\n", d.c_str(), manifest.at("command").get<std::string>().c_str(),
                        manifest.at("config_hash").get<std::string>().substr(0, 12).c_str(), passed ? "PASS" : "FAIL",
                        intact ? "" : " (files modified since run)");
    }
    if (as_json) std::printf("%s\n", out.dump(2).c_str());
    return all_ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wpse-lab: weighted point set embeddings on discrete worlds"};
    app.set_version_flag("--version", std::string("wpse-lab ") + kVersion);
    app.require_subcommand(1);
    app.fallthrough();
    std::string out_root = "runs";
    std::string run_name;
    app.add_option("--out", out_root, "root directory for run outputs")->capture_default_str();
    app.add_option("--run-name", run_name, "run directory name (default: <command>-<config hash>)");

    // gen-world
    CLI::App* gen = app.add_subcommand("gen-world", "generate a class-structured world");
    Params gen_p(gen);
    WorldOptions gen_w;
    gen_w.add(gen_p, "--seed,--world-seed");
    std::string gen_out;
    gen->add_option("-o,--output", gen_out, "world file to write (stdout if omitted)");

    // verify-bounds
    CLI::App* ver = app.add_subcommand("verify-bounds", "exact checks of the InfoNCE/PMI bounds");
    Params ver_p(ver);
    WorldOptions ver_w;
    ver_w.add(ver_p);
    VerifyOptions ver_o;
    ver_p.add("--suites", "suites", ver_o.suites, "comma-separated: pmi-optimum,lower-bound,mean-classifier,perturbation,probe");
    ver_p.add("--worlds", "worlds", ver_o.worlds, "random worlds per suite");
    ver_p.add("--max-n", "max_n", ver_o.max_n, "largest n_x, n_y of random worlds");
    ver_p.add("--tables", "tables", ver_o.tables, "random tables for the lower-bound suite");
    ver_p.add("--perturbations", "perturbations", ver_o.perturbations, "perturbations per size");
    ver_p.add("--perturb", "perturb", ver_o.perturb, "perturbation sup-norms")->delimiter(',');
    ver_p.add("--models", "models", ver_o.models, "trained models for the probe suite");
    ver_p.add("--train-steps", "train_steps", ver_o.train_steps, "steps per trained model");
    ver_p.add("--seed", "seed", ver_o.seed, "suite seed");

    // train
    CLI::App* tr = app.add_subcommand("train", "fit embeddings by population InfoNCE");
    Params tr_p(tr);
    WorldOptions tr_w;
    tr_w.add(tr_p);
    KernelOptions tr_k;
    tr_k.add(tr_p);
    TrainOptions tr_o;
    tr_o.add(tr_p);

    // rank
    CLI::App* rk = app.add_subcommand("rank", "rank ceiling of bilinear-plus-constant similarities");
    Params rk_p(rk);
    WorldOptions rk_w;
    rk_w.add(rk_p);
    RankOptions rk_o;
    rk_p.add("--d", "d", rk_o.d, "embedding dimension");
    rk_p.add("--n", "n", rk_o.n, "instances (0: random in [d+2, 20])");
    rk_p.add("--trials", "trials", rk_o.trials, "random factor pairs");
    rk_p.add("--seed", "seed", rk_o.seed, "seed");
    rk_p.flag("--pmi-floor", "pmi_floor", rk_o.floor, "also report the Frobenius floor of the world's PMI");

    // sweep
    CLI::App* sw = app.add_subcommand("sweep", "error of point-set fits to the PMI as M grows");
    Params sw_p(sw);
    WorldOptions sw_w;
    sw_w.add(sw_p);
    KernelOptions sw_k;
    sw_k.add(sw_p);
    SweepOptions sw_o;
    sw_p.add("--m", "m", sw_o.m_values, "points per instance")->delimiter(',');
    sw_p.add("--d", "d", sw_o.d, "point dimension");
    sw_p.add("--restarts", "restarts", sw_o.restarts, "restarts per M");
    sw_p.add("--steps", "steps", sw_o.steps, "steps per fit");
    sw_p.add("--lr", "lr", sw_o.lr, "learning rate");
    sw_p.add("--seed", "seed", sw_o.seed, "seed");
    sw_p.flag("--check", "check", sw_o.check, "fail unless the median curve is nonincreasing and beats linear by 2x");

    // rff-test
    CLI::App* rf = app.add_subcommand("rff-test", "Monte Carlo checks of random Fourier features");
    Params rf_p(rf);
    KernelOptions rf_k;
    rf_k.kind = "gaussian";
    rf_k.add(rf_p);
    RffOptions rf_o;
    rf_p.add("--d", "d", rf_o.d, "input dimension");
    rf_p.add("--D", "D", rf_o.D, "number of features");
    rf_p.add("--pairs", "pairs", rf_o.pairs, "random (u, v) pairs");
    rf_p.add("--seeds", "seeds", rf_o.seeds, "feature draws per pair");
    rf_p.add("--variance-seeds", "variance_seeds", rf_o.variance_seeds, "draws for the variance ratio");
    rf_p.add("--tol", "tol", rf_o.tol, "absolute tolerance on the mean");
    rf_p.add("--seed", "seed", rf_o.seed, "seed");

    // report
    CLI::App* rep = app.add_subcommand("report", "summarize run directories and check their manifests");
    std::vector<std::string> rep_dirs;
    bool rep_json = false;
    rep->add_option("runs", rep_dirs, "run directories")->required()->check(CLI::ExistingDirectory);
    rep->add_flag("--json", rep_json, "print JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        auto start = [&](const std::string& cmd, Params& p) {
            p.apply_config();
            return RunDir(out_root, cmd, p.effective(), run_name);
        };
        if (*gen) {
            gen_p.apply_config();
            return cmd_gen_world(gen_w, gen_out);
        }
        if (*ver) {
            ver_p.apply_config();
            if (!ver_w.file.empty()) load_world(ver_w.file);  // validate before creating the run directory
            RunDir run = start("verify-bounds", ver_p);
            return cmd_verify_bounds(ver_o, ver_w, run);
        }
        if (*tr) {
            tr_p.apply_config();
            tr_o.config(tr_k);
            RunDir run = start("train", tr_p);
            return cmd_train(tr_o, tr_k, tr_w, run);
        }
        if (*rk) {
            RunDir run = start("rank", rk_p);
            return cmd_rank(rk_o, rk_w, run);
        }
        if (*sw) {
            RunDir run = start("sweep", sw_p);
            return cmd_sweep(sw_o, sw_k, sw_w, run);
        }
        if (*rf) {
            RunDir run = start("rff-test", rf_p);
            return cmd_rff_test(rf_o, rf_k, run);
        }
        if (*rep) return cmd_report(rep_dirs, rep_json);
    } catch (const wpse::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitError;
    }
    return kExitError;
}
