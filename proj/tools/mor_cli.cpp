// mor: command-line front end.
//
//   mor run        --dataset D --backend toy|oracle|remote [--config C] [--url U] [--seed S] [--jobs J] --out results.json
//   mor ablate     ... --out ablation.csv
//   mor sweep      ... --k-list 1,2,3 --out sweep.csv
//   mor analyze    ... --kind diversity|curve --out analysis.csv
//   mor gen-oracle --aspects A --count N [--seed S] [--distractor-ratio R] --out suite.jsonl
//
// Exit codes: 0 success, 1 invalid input or flags, 2 backend failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "mor/mor.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitBackend = 2;

struct CommonFlags {
    std::string config_path;
    std::string dataset_path;
    std::string backend = "toy";
    std::string url;
    std::string oracle_spec;
    std::optional<long long> seed;
    std::string out;
    int jobs = 1;
    int toy_dim = 64;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "pipeline config (JSON); defaults when omitted")->check(CLI::ExistingFile);
    cmd->add_option("--dataset", f.dataset_path, "dataset (JSONL)")->required();
    cmd->add_option("--backend", f.backend, "toy | oracle | remote")
        ->check(CLI::IsMember({"toy", "oracle", "remote"}))
        ->required();
    cmd->add_option("--url", f.url, "remote backend base url, e.g. http://127.0.0.1:8080");
    cmd->add_option("--oracle-spec", f.oracle_spec, "oracle sidecar; default <dataset>.oracle.json");
    cmd->add_option("--seed", f.seed, "overrides the config seed (toy backend table seed)");
    cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::Range(1, 256));
    cmd->add_option("--toy-dim", f.toy_dim, "toy backend embedding width")->check(CLI::Range(8, 4096));
    cmd->add_option("--out", f.out, "output path")->required();
}

std::filesystem::path sidecar_for(const std::filesystem::path& dataset) {
    auto p = dataset;
    return p.replace_extension(".oracle.json");
}

int remote_timeout_ms() {
    if (const char* env = std::getenv("MOR_REMOTE_TIMEOUT_MS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
        throw mor::ValidationError("MOR_REMOTE_TIMEOUT_MS", std::string("not a positive integer: ") + env);
    }
    return 30000;
}

struct Session {
    mor::PipelineConfig config;
    mor::Dataset dataset;
    mor::BackendPtr backend;
};

// Validation problems surface as mor::Error subclasses other than BackendError.
Session open_session(const CommonFlags& f) {
    Session s;
    if (!f.config_path.empty()) s.config = mor::load_config(f.config_path);
    if (f.seed) s.config.seed = *f.seed;
    s.dataset = mor::load_dataset(f.dataset_path);

    if (f.backend == "toy") {
        s.backend = mor::make_toy_backend(static_cast<std::uint64_t>(s.config.seed), f.toy_dim, mor::default_toy_vocab(),
                                          s.dataset.d_img);
    } else if (f.backend == "oracle") {
        const auto path = f.oracle_spec.empty() ? sidecar_for(f.dataset_path).string() : f.oracle_spec;
        mor::json j;
        try {
            j = mor::json::parse(mor::read_file(path));
        } catch (const mor::json::parse_error& e) {
            throw mor::SchemaError(path + ": " + e.what());
        }
        s.backend = std::make_shared<mor::OracleBackend>(mor::oracle_spec_from_json(j));
    } else {
        if (f.url.empty()) throw mor::ValidationError("--url", "required with --backend remote");
        s.backend = mor::make_remote_backend(f.url, remote_timeout_ms());
    }
    const auto info = s.backend->info();
    if (info.d_img != s.dataset.d_img)
        throw mor::ValidationError("dataset", "image length " + std::to_string(s.dataset.d_img) + " but backend expects " +
                                                  std::to_string(info.d_img));
    return s;
}

std::vector<int> parse_k_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int k = std::stoi(mor::trim(item), &used);
            if (used != mor::trim(item).size() || k < 1) throw std::invalid_argument(item);
            out.push_back(k);
        } catch (const std::exception&) {
            throw mor::ValidationError("--k-list", "expected positive integers, got \"" + item + "\"");
        }
    }
    if (out.empty()) throw mor::ValidationError("--k-list", "empty");
    return out;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const mor::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const mor::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture-of-rationales zero-shot VQA engine"};
    app.require_subcommand(1);

    CommonFlags run_f, ablate_f, sweep_f, analyze_f;
    auto* run = app.add_subcommand("run", "answer every problem and write results JSON");
    add_common(run, run_f);

    auto* ablate = app.add_subcommand("ablate", "six-row module ablation, CSV");
    add_common(ablate, ablate_f);

    auto* sweep = app.add_subcommand("sweep", "accuracy for fixed k values, CSV");
    add_common(sweep, sweep_f);
    std::string k_list;
    sweep->add_option("--k-list", k_list, "comma-separated k values")->required();

    auto* analyze = app.add_subcommand("analyze", "rationale diversity matrix or similarity curve, CSV");
    add_common(analyze, analyze_f);
    std::string kind;
    analyze->add_option("--kind", kind, "diversity | curve")->check(CLI::IsMember({"diversity", "curve"}))->required();

    auto* gen = app.add_subcommand("gen-oracle", "write an oracle dataset and its backend sidecar");
    int aspects = 3, count = 200;
    long long gen_seed = 7;
    double ratio = mor::OracleTaskSpec{}.distractor_ratio;
    std::string gen_out;
    gen->add_option("--aspects", aspects, "aspects per answer, 1..8")->required();
    gen->add_option("--count", count, "number of problems")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--distractor-ratio", ratio, "fraction of prompts that are distractors");
    gen->add_option("--out", gen_out, "dataset path (JSONL)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    if (*run) {
        return guarded([&] {
            auto s = open_session(run_f);
            const auto result = mor::evaluate(*s.backend, s.dataset, s.config, run_f.jobs);
            mor::write_text(run_f.out, mor::to_json(result, s.config).dump(2) + "\n");
            if (result.accuracy_overall)
                std::cout << "accuracy: " << mor::format_number(*result.accuracy_overall) << "\n";
            else
                std::cout << "accuracy: n/a (no gold answers)\n";
            return kExitOk;
        });
    }
    if (*ablate) {
        return guarded([&] {
            auto s = open_session(ablate_f);
            const auto rows = mor::ablation_grid(*s.backend, s.dataset, s.config, ablate_f.jobs);
            mor::write_text(ablate_f.out, mor::ablation_csv(rows));
            for (const auto& r : rows) std::cout << r.label << ": " << mor::format_number(r.score) << "\n";
            return kExitOk;
        });
    }
    if (*sweep) {
        return guarded([&] {
            const auto ks = parse_k_list(k_list);
            auto s = open_session(sweep_f);
            const auto rows = mor::k_sweep(*s.backend, s.dataset, s.config, ks, sweep_f.jobs);
            mor::write_text(sweep_f.out, mor::sweep_csv(rows));
            for (const auto& [k, score] : rows) std::cout << "k=" << k << ": " << mor::format_number(score) << "\n";
            return kExitOk;
        });
    }
    if (*analyze) {
        return guarded([&] {
            auto s = open_session(analyze_f);
            if (kind == "diversity")
                mor::write_text(analyze_f.out, mor::diversity_csv(mor::dataset_diversity(*s.backend, s.dataset, s.config, analyze_f.jobs)));
            else
                mor::write_text(analyze_f.out, mor::curve_csv(mor::dataset_curve(*s.backend, s.dataset, s.config, analyze_f.jobs)));
            return kExitOk;
        });
    }
    if (*gen) {
        return guarded([&] {
            if (aspects < 1 || aspects > 8) throw mor::ValidationError("--aspects", "must lie in 1..8");
            if (count < 1) throw mor::ValidationError("--count", "must be >= 1");
            mor::OracleTaskSpec spec;
            spec.num_aspects = aspects;
            spec.seed = static_cast<std::uint64_t>(gen_seed);
            spec.distractor_ratio = ratio;
            auto [backend, generator] = mor::make_oracle_backend(spec);
            mor::write_text(gen_out, mor::dataset_to_jsonl(generator.problems(static_cast<std::size_t>(count))));
            mor::write_text(sidecar_for(gen_out).string(), mor::to_json(spec).dump(2) + "\n");
            std::cout << "wrote " << count << " problems to " << gen_out << "\n";
            return kExitOk;
        });
    }
    return kExitInvalid;
}
