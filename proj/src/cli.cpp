#include "ckdrift/cli.hpp"

#include "ckdrift/arch_map.hpp"
#include "ckdrift/error.hpp"
#include "ckdrift/gen_eval.hpp"
#include "ckdrift/kg_corpus.hpp"
#include "ckdrift/param_metrics.hpp"
#include "ckdrift/report.hpp"
#include "text_format.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>
#include <utility>

namespace ckdrift::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Fields = std::vector<std::pair<std::string, std::string>>;

std::string log_value(const std::string& value) {
    const bool plain = !value.empty() && std::none_of(value.begin(), value.end(), [](char c) {
        return c == ' ' || c == '"' || c == '=' || c == '\\' || static_cast<unsigned char>(c) < 0x20;
    });
    return plain ? value : detail::json_quote(value);
}

void log_line(std::ostream& err, const Fields& fields) {
    std::string line;
    for (const auto& [key, value] : fields) {
        if (!line.empty()) line += ' ';
        line += key + '=' + log_value(value);
    }
    err << line << '\n';
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void require_input_file(const std::string& flag, const std::string& path) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw UsageError(flag + ": not a readable file: " + path);
}

void require_output_file(const std::string& flag, const std::string& path) {
    std::error_code ec;
    if (path.empty()) throw UsageError(flag + ": empty path");
    if (fs::is_directory(path, ec)) throw UsageError(flag + ": is a directory: " + path);
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty() && !fs::is_directory(parent, ec)) {
        throw UsageError(flag + ": parent directory does not exist: " + parent.string());
    }
}

void require_output_dir(const std::string& flag, const std::string& path) {
    std::error_code ec;
    if (path.empty()) throw UsageError(flag + ": empty path");
    if (fs::exists(path, ec) && !fs::is_directory(path, ec)) throw UsageError(flag + ": not a directory: " + path);
}

void require_set(const CLI::App& sub, std::initializer_list<const char*> flags) {
    for (const char* flag : flags) {
        if (sub.get_option(flag)->count() == 0) throw UsageError(std::string(flag) + " is required");
    }
}

/// Files rendered in memory and published together: each goes to a sibling
/// temporary first and is renamed into place only once all were written.
class Outputs {
public:
    Outputs() = default;
    Outputs(const Outputs&) = delete;
    Outputs& operator=(const Outputs&) = delete;
    ~Outputs() { rollback(); }

    void add(fs::path path, std::string content) { files_.push_back({std::move(path), std::move(content)}); }

    void commit() {
        for (const auto& [path, content] : files_) {
            fs::path temp = path;
            temp += ".partial-" + std::to_string(::getpid());
            temps_.push_back(temp);
            std::ofstream out(temp, std::ios::binary | std::ios::trunc);
            out.write(content.data(), static_cast<std::streamsize>(content.size()));
            out.close();
            if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + temp.string());
        }
        for (std::size_t i = 0; i < files_.size(); ++i) {
            std::error_code ec;
            fs::rename(temps_[i], files_[i].first, ec);
            if (ec) throw Error(ErrorCode::IoFailure, "cannot rename into " + files_[i].first.string());
            published_.push_back(files_[i].first);
        }
        temps_.clear();
        published_.clear();
    }

    std::size_t size() const { return files_.size(); }

private:
    void rollback() noexcept {
        std::error_code ec;
        for (const auto& temp : temps_) fs::remove(temp, ec);
        for (const auto& path : published_) fs::remove(path, ec);
    }

    std::vector<std::pair<fs::path, std::string>> files_;
    std::vector<fs::path> temps_;
    std::vector<fs::path> published_;
};

std::size_t resolve_threads(const CLI::Option* flag, std::size_t value) {
    if (flag->count() > 0) {
        if (value == 0) throw UsageError("--threads must be positive");
        return value;
    }
    if (const char* env = std::getenv("CKPT_DRIFT_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const unsigned long long parsed = std::strtoull(env, &end, 10);
        if (*end != '\0' || parsed == 0 || env[0] == '-') {
            throw UsageError(std::string("CKPT_DRIFT_THREADS must be a positive integer, got ") + env);
        }
        return static_cast<std::size_t>(parsed);
    }
    return std::max(1U, std::thread::hardware_concurrency());
}

// Config JSON keys mirror long flag names without the dashes. Flags given on
// the command line win.
void apply_config(CLI::App& sub, const std::string& path) {
    nlohmann::json config;
    try {
        config = nlohmann::json::parse(read_text(path));
    } catch (const std::exception& e) {
        throw UsageError("--config: cannot read " + path + ": " + e.what());
    }
    if (!config.is_object()) throw UsageError("--config: top level must be an object");
    for (const auto& [key, value] : config.items()) {
        CLI::Option* opt = key == "config" ? nullptr : sub.get_option_no_throw("--" + key);
        if (opt == nullptr) throw UsageError("--config: unknown key \"" + key + "\" for " + sub.get_name());
        if (opt->count() > 0) continue;
        std::vector<nlohmann::json> items;
        if (value.is_array()) {
            items.assign(value.begin(), value.end());
        } else {
            items.push_back(value);
        }
        for (const auto& item : items) {
            if (item.is_string()) {
                opt->add_result(item.get<std::string>());
            } else if (item.is_boolean()) {
                opt->add_result(item.get<bool>() ? "true" : "false");
            } else if (item.is_number()) {
                opt->add_result(item.dump());
            } else {
                throw UsageError("--config: unsupported value for \"" + key + "\"");
            }
        }
        try {
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError("--config: \"" + key + "\": " + e.what());
        }
    }
}

std::vector<std::string> split_list(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& item : raw) {
        std::stringstream stream(item);
        std::string piece;
        while (std::getline(stream, piece, ',')) {
            if (!piece.empty()) out.push_back(piece);
        }
    }
    return out;
}

struct DiffArgs {
    std::string before, after, rules = "t5", out, csv;
    double quantum = kDefaultQuantum;
    std::size_t threads = 0;
};

struct HeatmapArgs {
    std::vector<std::string> reports, labels;
    std::string measure = "l1", scale = "per_panel", out;
    int precision = 3;
};

struct AggregateArgs {
    std::vector<std::string> reports;
    std::string out, csv;
};

struct SampleArgs {
    std::string kg, valid_pool, out_dir, prompts, mode;
    std::size_t n = 0;
    std::uint64_t seed = 0, shuffle_seed = 0;
    std::vector<std::string> holdout;
    bool validation = false;
};

struct FormatArgs {
    std::string split, prompts, mode = "natural", out;
    std::uint64_t shuffle_seed = 0;
};

struct EvalArgs {
    std::vector<std::string> generations, metrics;
    std::string references, out;
};

class Command {
public:
    Command(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    int run(const std::vector<std::string>& args);

private:
    void define(CLI::App& app);
    Fields run_diff();
    Fields run_heatmap();
    Fields run_aggregate();
    Fields run_sample();
    Fields run_format();
    Fields run_eval();

    std::ostream& out_;
    std::ostream& err_;
    CLI::App* diff_ = nullptr;
    CLI::App* heatmap_ = nullptr;
    CLI::App* aggregate_ = nullptr;
    CLI::App* sample_ = nullptr;
    CLI::App* format_ = nullptr;
    CLI::App* eval_ = nullptr;
    std::vector<std::string> configs_ = std::vector<std::string>(6);
    DiffArgs diff_args_;
    HeatmapArgs heatmap_args_;
    AggregateArgs aggregate_args_;
    SampleArgs sample_args_;
    FormatArgs format_args_;
    EvalArgs eval_args_;
};

void Command::define(CLI::App& app) {
    app.require_subcommand(1);
    app.fallthrough(false);

    diff_ = app.add_subcommand("diff", "Per-matrix change measures between two checkpoints");
    diff_->add_option("--before", diff_args_.before, "Checkpoint before fine-tuning");
    diff_->add_option("--after", diff_args_.after, "Checkpoint after fine-tuning");
    diff_->add_option("--rules", diff_args_.rules, "Rule table JSON, or \"t5\" for the built-in table")
        ->capture_default_str();
    diff_->add_option("--out", diff_args_.out, "Report JSON to write");
    diff_->add_option("--csv", diff_args_.csv, "Also write the report as CSV");
    diff_->add_option("--quantum", diff_args_.quantum, "Rounding quantum for the change distribution")
        ->capture_default_str();
    diff_->add_option("--threads", diff_args_.threads, "Worker threads (default: CKPT_DRIFT_THREADS or all cores)");

    heatmap_ = app.add_subcommand("heatmap", "Render report(s) as an SVG heatmap");
    heatmap_->add_option("--report", heatmap_args_.reports, "Report JSON, one per panel (repeatable)");
    heatmap_->add_option("--measure", heatmap_args_.measure, "l1, angular or auc")
        ->check(CLI::IsMember({"l1", "angular", "auc"}))
        ->capture_default_str();
    heatmap_->add_option("--scale", heatmap_args_.scale, "Color scale: per_panel or shared")
        ->check(CLI::IsMember({"per_panel", "shared"}))
        ->capture_default_str();
    heatmap_->add_option("--label", heatmap_args_.labels, "Panel label, one per report (repeatable)");
    heatmap_->add_option("--precision", heatmap_args_.precision, "Decimals in cell annotations")
        ->check(CLI::Range(0, 17))
        ->capture_default_str();
    heatmap_->add_option("--out", heatmap_args_.out, "SVG file to write");

    aggregate_ = app.add_subcommand("aggregate", "Cell-wise mean of reports over the same taxonomy");
    aggregate_->add_option("--report", aggregate_args_.reports, "Report JSON (repeatable)");
    aggregate_->add_option("--out", aggregate_args_.out, "Report JSON to write");
    aggregate_->add_option("--csv", aggregate_args_.csv, "Also write the result as CSV");

    sample_ = app.add_subcommand("sample", "Seeded per-relation few-shot split of a knowledge graph");
    sample_->add_option("--kg", sample_args_.kg, "Knowledge graph TSV (head, relation, tail)");
    sample_->add_option("--n", sample_args_.n, "Examples per relation");
    sample_->add_option("--seed", sample_args_.seed, "Sampling seed")->capture_default_str();
    sample_->add_option("--holdout", sample_args_.holdout,
                        "Relations kept for few-shot training; the rest go to pretrain.tsv (repeatable or comma list)");
    sample_->add_flag("--validation", sample_args_.validation, "Also sample n validation tuples per relation");
    sample_->add_option("--valid-pool", sample_args_.valid_pool,
                        "Draw validation tuples from this TSV instead of the training pool (implies --validation)");
    sample_->add_option("--out-dir", sample_args_.out_dir, "Directory for train/valid/pretrain files and manifest");
    sample_->add_option("--prompts", sample_args_.prompts, "Prompt inventory JSON; writes formatted files");
    sample_->add_option("--mode", sample_args_.mode, "natural, paraphrase, shuffled or embedding; writes formatted files")
        ->check(CLI::IsMember({"natural", "paraphrase", "shuffled", "embedding"}));
    sample_->add_option("--shuffle-seed", sample_args_.shuffle_seed, "Seed of the prompt derangement (shuffled mode)");

    format_ = app.add_subcommand("format", "Turn raw tuples into input/target pairs");
    format_->add_option("--split", format_args_.split, "Raw tuple TSV, e.g. train.tsv from sample");
    format_->add_option("--prompts", format_args_.prompts,
                        "Prompt inventory JSON (default: built-in table for the mode)");
    format_->add_option("--mode", format_args_.mode, "natural, paraphrase, shuffled or embedding")
        ->check(CLI::IsMember({"natural", "paraphrase", "shuffled", "embedding"}))
        ->capture_default_str();
    format_->add_option("--shuffle-seed", format_args_.shuffle_seed, "Seed of the prompt derangement (shuffled mode)");
    format_->add_option("--out", format_args_.out, "Two-column TSV to write");

    eval_ = app.add_subcommand("eval", "Score generations against references");
    eval_->add_option("--generations", eval_args_.generations,
                      "Generation TSV (head, relation, candidate), one per run (repeatable)");
    eval_->add_option("--references", eval_args_.references, "Reference TSV (head, relation, tail)");
    eval_->add_option("--metrics", eval_args_.metrics, "Comma list of bleu1, meteor, rougeL, cider (default: all)");
    eval_->add_option("--out", eval_args_.out, "Metrics JSON to write");

    CLI::App* subs[] = {diff_, heatmap_, aggregate_, sample_, format_, eval_};
    for (std::size_t i = 0; i < 6; ++i) {
        subs[i]->add_option("--config", configs_[i], "JSON file whose keys mirror the flags; flags win");
    }
}

Fields Command::run_diff() {
    auto& a = diff_args_;
    require_set(*diff_, {"--before", "--after", "--out"});
    require_input_file("--before", a.before);
    require_input_file("--after", a.after);
    if (a.rules != "t5") require_input_file("--rules", a.rules);
    require_output_file("--out", a.out);
    if (!a.csv.empty()) require_output_file("--csv", a.csv);
    if (!(a.quantum > 0.0) || !std::isfinite(a.quantum)) throw UsageError("--quantum must be positive");
    const std::size_t threads = resolve_threads(diff_->get_option("--threads"), a.threads);

    const RuleTable rules = a.rules == "t5" ? RuleTable::t5_default() : RuleTable::load(a.rules);
    const DiffReport report = diff_checkpoint_files(a.before, a.after, rules, {a.quantum, threads});
    Outputs outputs;
    outputs.add(a.out, to_json(report));
    if (!a.csv.empty()) outputs.add(a.csv, export_csv(report));
    outputs.commit();
    return {{"cells", std::to_string(report.cells.size())},
            {"unclassified", std::to_string(report.unclassified.size())},
            {"threads", std::to_string(threads)},
            {"out", a.out}};
}

Fields Command::run_heatmap() {
    auto& a = heatmap_args_;
    require_set(*heatmap_, {"--report", "--out"});
    for (const auto& path : a.reports) require_input_file("--report", path);
    require_output_file("--out", a.out);
    if (!a.labels.empty() && a.labels.size() != a.reports.size()) {
        throw UsageError("--label must be given once per --report");
    }
    HeatmapSpec spec;
    spec.measure = *parse_measure(a.measure);
    spec.color_scale = *parse_color_scale(a.scale);
    spec.panel_labels = a.labels;
    spec.precision = a.precision;

    std::vector<DiffReport> reports;
    for (const auto& path : a.reports) reports.push_back(load_report(path));
    Outputs outputs;
    outputs.add(a.out, render_heatmap(reports, spec));
    outputs.commit();
    return {{"panels", std::to_string(reports.size())}, {"measure", a.measure}, {"out", a.out}};
}

Fields Command::run_aggregate() {
    auto& a = aggregate_args_;
    require_set(*aggregate_, {"--report", "--out"});
    for (const auto& path : a.reports) require_input_file("--report", path);
    require_output_file("--out", a.out);
    if (!a.csv.empty()) require_output_file("--csv", a.csv);

    std::vector<DiffReport> reports;
    for (const auto& path : a.reports) reports.push_back(load_report(path));
    const DiffReport mean = aggregate_reports(reports);
    Outputs outputs;
    outputs.add(a.out, to_json(mean));
    if (!a.csv.empty()) outputs.add(a.csv, export_csv(mean));
    outputs.commit();
    return {{"reports", std::to_string(reports.size())}, {"cells", std::to_string(mean.cells.size())}, {"out", a.out}};
}

PromptInventory default_inventory(FormatMode mode) {
    return mode == FormatMode::Paraphrase ? PromptInventory::atomic2020_paraphrased() : PromptInventory::atomic2020();
}

// Moves every regular file of `staging` into `target`, then drops `staging`.
void publish_directory(const fs::path& staging, const fs::path& target) {
    Outputs outputs;
    std::vector<fs::path> names;
    for (const auto& entry : fs::directory_iterator(staging)) names.push_back(entry.path().filename());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) outputs.add(target / name, read_text(staging / name));
    outputs.commit();
}

Fields Command::run_sample() {
    auto& a = sample_args_;
    require_set(*sample_, {"--kg", "--n", "--out-dir"});
    require_input_file("--kg", a.kg);
    if (!a.valid_pool.empty()) require_input_file("--valid-pool", a.valid_pool);
    require_output_dir("--out-dir", a.out_dir);
    if (!a.prompts.empty()) require_input_file("--prompts", a.prompts);
    if (a.n == 0) throw UsageError("--n must be positive");
    const bool formatted = !a.mode.empty() || !a.prompts.empty();
    const FormatMode mode = a.mode.empty() ? FormatMode::Natural : *parse_format_mode(a.mode);
    if (sample_->get_option("--shuffle-seed")->count() > 0 && mode != FormatMode::Shuffled) {
        throw UsageError("--shuffle-seed applies only to --mode shuffled");
    }
    if (!a.prompts.empty() && mode == FormatMode::Embedding) {
        throw UsageError("--prompts cannot be combined with --mode embedding");
    }

    FewShotSpec spec;
    spec.n = a.n;
    spec.seed = a.seed;
    const auto holdout = split_list(a.holdout);
    spec.holdout_relations.insert(holdout.begin(), holdout.end());
    spec.validation = a.validation || !a.valid_pool.empty();

    const auto kg = load_kg(a.kg);
    std::optional<std::vector<KnowledgeTuple>> pool;
    if (!a.valid_pool.empty()) pool = load_kg(a.valid_pool);
    const FewShotSplit split = sample_few_shot(kg, spec, pool ? &*pool : nullptr);
    std::optional<TupleFormatter> formatter;
    if (formatted) {
        PromptInventory inventory = a.prompts.empty() ? default_inventory(mode) : PromptInventory::load(a.prompts);
        formatter.emplace(std::move(inventory), mode, a.shuffle_seed);
    }

    const fs::path target(a.out_dir);
    std::error_code ec;
    const bool created = !fs::exists(target, ec);
    fs::create_directories(target);
    const fs::path staging = target / (".staging-" + std::to_string(::getpid()));
    try {
        fs::remove_all(staging);
        fs::create_directory(staging);
        if (formatter) {
            export_split(split, *formatter, a.shuffle_seed, staging);
        } else {
            export_raw_split(split, staging);
        }
        publish_directory(staging, target);
        fs::remove_all(staging);
    } catch (...) {
        fs::remove_all(staging, ec);
        if (created) fs::remove(target, ec);
        throw;
    }
    return {{"train", std::to_string(split.train.size())},
            {"valid", std::to_string(split.validation.size())},
            {"pretrain", std::to_string(split.pretrain.size())},
            {"mode", formatter ? std::string(to_string(mode)) : "raw"},
            {"out_dir", a.out_dir}};
}

Fields Command::run_format() {
    auto& a = format_args_;
    require_set(*format_, {"--split", "--out"});
    require_input_file("--split", a.split);
    if (!a.prompts.empty()) require_input_file("--prompts", a.prompts);
    require_output_file("--out", a.out);
    const FormatMode mode = *parse_format_mode(a.mode);
    if (format_->get_option("--shuffle-seed")->count() > 0 && mode != FormatMode::Shuffled) {
        throw UsageError("--shuffle-seed applies only to --mode shuffled");
    }
    if (!a.prompts.empty() && mode == FormatMode::Embedding) {
        throw UsageError("--prompts cannot be combined with --mode embedding");
    }

    const auto tuples = load_kg(a.split);
    PromptInventory inventory = a.prompts.empty() ? default_inventory(mode) : PromptInventory::load(a.prompts);
    const TupleFormatter formatter(std::move(inventory), mode, a.shuffle_seed);
    Outputs outputs;
    outputs.add(a.out, formatted_tsv(tuples, formatter));
    outputs.commit();
    return {{"lines", std::to_string(tuples.size())}, {"mode", a.mode}, {"out", a.out}};
}

Fields Command::run_eval() {
    auto& a = eval_args_;
    require_set(*eval_, {"--generations", "--references", "--out"});
    for (const auto& path : a.generations) require_input_file("--generations", path);
    require_input_file("--references", a.references);
    require_output_file("--out", a.out);
    std::vector<Metric> metrics;
    const auto names = split_list(a.metrics);
    for (const auto& name : names) {
        const auto metric = parse_metric(name);
        if (!metric) throw UsageError("--metrics: unknown metric " + name);
        if (std::find(metrics.begin(), metrics.end(), *metric) == metrics.end()) metrics.push_back(*metric);
    }
    if (metrics.empty()) metrics.assign(std::begin(kAllMetrics), std::end(kAllMetrics));

    std::vector<RunScores> runs;
    std::size_t records = 0;
    for (const auto& path : a.generations) {
        const auto corpus = load_generations(path, a.references);
        records += corpus.size();
        runs.push_back(score_corpus(corpus, metrics));
    }
    Outputs outputs;
    outputs.add(a.out, to_json(evaluate_runs(runs)));
    outputs.commit();
    return {{"runs", std::to_string(runs.size())}, {"records", std::to_string(records)}, {"out", a.out}};
}

int Command::run(const std::vector<std::string>& args) {
    CLI::App app{"Checkpoint drift and few-shot commonsense tooling", "ckpt-drift"};
    define(app);

    std::vector<const char*> argv;
    for (const auto& arg : args) argv.push_back(arg.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out_, err_);
        return code == 0 ? kExitOk : kExitUsage;
    }

    CLI::App* subs[] = {diff_, heatmap_, aggregate_, sample_, format_, eval_};
    CLI::App* sub = nullptr;
    std::size_t index = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        if (subs[i]->parsed()) {
            sub = subs[i];
            index = i;
        }
    }
    const std::string name = sub->get_name();
    const auto start = std::chrono::steady_clock::now();
    try {
        if (!configs_[index].empty()) {
            require_input_file("--config", configs_[index]);
            apply_config(*sub, configs_[index]);
        }
        Fields fields = sub == diff_        ? run_diff()
                        : sub == heatmap_   ? run_heatmap()
                        : sub == aggregate_ ? run_aggregate()
                        : sub == sample_    ? run_sample()
                        : sub == format_    ? run_format()
                                            : run_eval();
        const auto elapsed =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
        fields.insert(fields.begin(), {{"level", "info"}, {"cmd", name}, {"status", "ok"}});
        fields.emplace_back("elapsed_ms", std::to_string(elapsed.count()));
        log_line(err_, fields);
        return kExitOk;
    } catch (const UsageError& e) {
        log_line(err_, {{"level", "error"}, {"cmd", name}, {"status", "usage"}, {"msg", e.what()}});
        return kExitUsage;
    } catch (const Error& e) {
        log_line(err_, {{"level", "error"},
                        {"cmd", name},
                        {"status", "data"},
                        {"code", std::string(to_string(e.code()))},
                        {"msg", e.what()}});
        return kExitData;
    } catch (const std::exception& e) {
        log_line(err_, {{"level", "error"}, {"cmd", name}, {"status", "data"}, {"msg", e.what()}});
        return kExitData;
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Command command(out, err);
    return command.run(args);
}

int run(int argc, char** argv) {
    return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace ckdrift::cli
