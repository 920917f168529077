#include "relink/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "relink/config.hpp"
#include "relink/corpus.hpp"
#include "relink/evaluation.hpp"
#include "relink/explorer.hpp"
#include "relink/generation.hpp"
#include "relink/kg_store.hpp"
#include "relink/latent_pool.hpp"
#include "relink/prompts.hpp"
#include "relink/random.hpp"
#include "relink/ranker.hpp"
#include "relink/semantic_space.hpp"

namespace relink {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct WorkFiles {
    fs::path dir;
    fs::path store() const { return dir / "store.json"; }
    fs::path graph() const { return dir / "graph.json"; }
    fs::path pool() const { return dir / "pool.json"; }
    fs::path adapter() const { return dir / "adapter.json"; }
    fs::path ranker() const { return dir / "ranker.json"; }
    fs::path adapter_nocontra() const { return dir / "adapter_nocontra.json"; }
    fs::path ranker_nocontra() const { return dir / "ranker_nocontra.json"; }
    fs::path train_report() const { return dir / "train_report.json"; }
    fs::path results() const { return dir / "results"; }
};

void require_artifact(const fs::path& p, const char* command) {
    if (!fs::exists(p))
        throw Error(ErrorCode::MissingArtifact,
                    fmt::format("{} not found; run `relink {}` first", p.string(), command));
}

/// Exclusive marker in the work directory held for the lifetime of a
/// writing command.
class WorkLock {
public:
    explicit WorkLock(const fs::path& dir) : path_(dir / ".relink.lock") {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f)
            throw Error(ErrorCode::Locked,
                        fmt::format("{} exists; another relink command is writing to this directory", path_.string()));
        std::fclose(f);
    }
    ~WorkLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    WorkLock(const WorkLock&) = delete;
    WorkLock& operator=(const WorkLock&) = delete;

private:
    fs::path path_;
};

struct Session {
    PipelineConfig config;
    WorkFiles files;
    PromptLibrary prompts;
    std::unique_ptr<LlmGateway> gateway;
    std::ostream& out;
};

Session open_session(const PipelineConfig& config, const CliHooks& hooks, std::ostream& out) {
    std::unique_ptr<Backend> backend;
    if (config.gateway.transcript_mode != TranscriptMode::Replay)
        backend = hooks.backend_factory ? hooks.backend_factory(config.gateway) : make_backend(config.gateway);
    PromptLibrary prompts = config.paths.templates.empty() ? PromptLibrary{}
                                                           : PromptLibrary::from_directory(config.paths.templates);
    return Session{config, WorkFiles{config.paths.work_dir}, std::move(prompts),
                   std::make_unique<LlmGateway>(config.gateway, std::move(backend)), out};
}

EntityCatalog load_catalog(const PipelineConfig& c) {
    if (c.paths.catalog.empty()) throw Error(ErrorCode::Config, "paths.catalog is not set");
    return load_entity_catalog(c.paths.catalog);
}

// ---- commands --------------------------------------------------------------

void cmd_build_kg(Session& s) {
    if (s.config.paths.corpus.empty()) throw Error(ErrorCode::Config, "paths.corpus is not set");
    const EntityCatalog catalog = load_catalog(s.config);
    CorpusStore store = annotate_mentions(ingest_corpus(s.config.paths.corpus), catalog);
    ExtractionReport report;
    const GraphBackbone g = extract_backbone(store, catalog, *s.gateway, s.prompts, s.config.extraction, &report);
    store.save(s.files.store());
    g.save(s.files.graph());
    s.gateway->flush_transcript();
    s.out << fmt::format("documents {}\nsentences {}\nsentences prompted {}\ntriples {} (rejected {}, duplicate {})\n",
                         store.documents().size(), store.sentences().size(), report.sentences_prompted, g.size(),
                         report.triples_rejected, report.triples_duplicate);
}

void cmd_build_pool(Session& s) {
    require_artifact(s.files.store(), "build-kg");
    const EntityCatalog catalog = load_catalog(s.config);
    const CorpusStore store = CorpusStore::load(s.files.store());
    const auto stats = count_cooccurrences(store);
    PoolReport report;
    const LatentPool pool = build_pool(store, catalog, stats, *s.gateway, s.config.pool, &report);
    pool.save(s.files.pool());
    s.gateway->flush_transcript();
    s.out << fmt::format("pairs considered {}\npairs kept {}\nrelations {}\ndim {}\n", report.pairs_considered,
                         report.pairs_kept, pool.size(), pool.dim());
}

json stages_json(const StagedResult& r) {
    json stages = json::array();
    for (const auto& st : r.stages)
        stages.push_back({{"cycle", st.cycle},
                          {"stage", st.stage},
                          {"loss", format_fixed(st.loss)},
                          {"ranker_hash_before", st.ranker_hash_before},
                          {"ranker_hash_after", st.ranker_hash_after},
                          {"adapter_hash_before", st.adapter_hash_before},
                          {"adapter_hash_after", st.adapter_hash_after}});
    json acc = json::array();
    for (double a : r.val_accuracy) acc.push_back(format_fixed(a));
    return {{"best_cycle", r.best_cycle},
            {"best_val_accuracy", format_fixed(r.best_val_accuracy)},
            {"val_accuracy", acc},
            {"stages", stages}};
}

void cmd_train(Session& s) {
    require_artifact(s.files.store(), "build-kg");
    require_artifact(s.files.graph(), "build-kg");
    require_artifact(s.files.pool(), "build-pool");
    if (s.config.paths.train_questions.empty()) throw Error(ErrorCode::Config, "paths.train_questions is not set");
    const EntityCatalog catalog = load_catalog(s.config);
    const CorpusStore store = CorpusStore::load(s.files.store());
    const GraphBackbone graph = GraphBackbone::load(s.files.graph());
    const LatentPool pool = LatentPool::load(s.files.pool());
    const auto records = load_dataset(s.config.paths.train_questions);

    KnowledgeSources sources{&catalog, &store, &graph, &pool, nullptr, nullptr};
    const auto align = materialize_alignment_pairs(mine_alignment_pairs(graph, pool), catalog, *s.gateway);
    MiningConfig mc{s.config.ranker.negatives_per_positive, derive_seed(s.config.seed, 11), true, true};
    const auto tuples = mine_preferences(records, sources, mc);
    const auto prefs = materialize_preferences(tuples, sources, *s.gateway);
    if (prefs.empty()) throw Error(ErrorCode::EmptyDataset, "no preference tuples could be mined from the training questions");

    const int raw_dim = static_cast<int>(prefs.front().query_raw.size());
    const int dim = s.config.semantic.dim > 0 ? s.config.semantic.dim : raw_dim;
    const auto adapter0 = ProjectionAdapter::initial(dim, raw_dim, s.config.semantic.temperature,
                                                     derive_seed(s.config.seed, 21));
    const auto ranker0 = RankerModel::initial(dim, s.config.ranker.hidden, derive_seed(s.config.seed, 22));

    StagedConfig sc;
    sc.max_cycles = s.config.ranker.max_cycles;
    sc.patience = s.config.ranker.patience;
    sc.val_fraction = s.config.ranker.val_fraction;
    sc.margin = s.config.ranker.margin;
    sc.ranker_learning_rate = s.config.ranker.learning_rate;
    sc.ranker_batch_size = s.config.ranker.batch_size;
    sc.align = TrainConfig{1, s.config.semantic.learning_rate, s.config.semantic.batch_size, 0};
    sc.seed = derive_seed(s.config.seed, 23);

    const StagedResult full = staged_train(ranker0, adapter0, prefs, align, sc);
    sc.align_enabled = false;
    const StagedResult nocontra = staged_train(ranker0, adapter0, prefs, align, sc);

    full.adapter.save(s.files.adapter());
    full.ranker.save(s.files.ranker());
    nocontra.adapter.save(s.files.adapter_nocontra());
    nocontra.ranker.save(s.files.ranker_nocontra());
    const json report = {{"config_hash", s.config.hash()},
                         {"seed", s.config.seed},
                         {"alignment_pairs", align.size()},
                         {"preference_tuples", prefs.size()},
                         {"full", stages_json(full)},
                         {"nocontra", stages_json(nocontra)}};
    write_file(s.files.train_report(), report.dump(2) + "\n");
    s.gateway->flush_transcript();
    s.out << fmt::format("alignment pairs {}\npreference tuples {}\nval accuracy {} (cycle {})\n", align.size(),
                         prefs.size(), format_fixed(full.best_val_accuracy, 4), full.best_cycle);
}

struct Loaded {
    EntityCatalog catalog;
    CorpusStore store;
    GraphBackbone graph;
    LatentPool pool;
    RankerModel ranker, ranker_nocontra;
    ProjectionAdapter adapter, adapter_nocontra;
};

std::unique_ptr<Loaded> load_all(const Session& s) {
    require_artifact(s.files.store(), "build-kg");
    require_artifact(s.files.graph(), "build-kg");
    require_artifact(s.files.pool(), "build-pool");
    require_artifact(s.files.ranker(), "train");
    require_artifact(s.files.adapter(), "train");
    auto l = std::make_unique<Loaded>();
    l->catalog = load_catalog(s.config);
    l->store = CorpusStore::load(s.files.store());
    l->graph = GraphBackbone::load(s.files.graph());
    l->pool = LatentPool::load(s.files.pool());
    l->ranker = RankerModel::load(s.files.ranker());
    l->adapter = ProjectionAdapter::load(s.files.adapter());
    if (fs::exists(s.files.ranker_nocontra()) && fs::exists(s.files.adapter_nocontra())) {
        l->ranker_nocontra = RankerModel::load(s.files.ranker_nocontra());
        l->adapter_nocontra = ProjectionAdapter::load(s.files.adapter_nocontra());
    }
    return l;
}

PipelineResources resources(Session& s, const Loaded& l) {
    PipelineResources r;
    r.store = &l.store;
    r.catalog = &l.catalog;
    r.backbone = &l.graph;
    r.pool = &l.pool;
    r.ranker = &l.ranker;
    r.adapter = &l.adapter;
    if (l.adapter_nocontra.raw_dim() > 0) {
        r.ranker_nocontra = &l.ranker_nocontra;
        r.adapter_nocontra = &l.adapter_nocontra;
    }
    r.gateway = s.gateway.get();
    r.prompts = &s.prompts;
    r.explore = s.config.explore;
    return r;
}

void cmd_query(Session& s, const std::string& question, const std::vector<std::string>& topics) {
    const auto l = load_all(s);
    QueryRecord q{"cli", question, topics, std::nullopt, {}};
    InstantiatedOverlay overlay;
    Instantiator inst;
    ExploreContext ctx;
    ctx.sources = {&l->catalog, &l->store, &l->graph, &l->pool, nullptr, nullptr};
    ctx.models = {&l->ranker, &l->adapter};
    ctx.gateway = s.gateway.get();
    ctx.prompts = &s.prompts;
    ctx.overlay = &overlay;
    ctx.instantiator = &inst;
    const EvidenceGraph ev = explore(q, ctx, s.config.explore);
    const AnswerRecord ans = generate_answer(q, ev, l->catalog, *s.gateway, s.prompts);
    s.gateway->flush_transcript();
    if (!ans.error.empty()) throw Error(ErrorCode::Gateway, ans.error);
    s.out << "Answer: " << ans.answer << "\n";
    if (ans.fallback_used) {
        s.out << "Evidence: none (answered without retrieved evidence)\n";
        return;
    }
    s.out << "Evidence:\n";
    for (const auto& t : ev.triples)
        s.out << fmt::format("  {} — {} — {} ({})\n    source [{}]: {}\n", l->catalog.name_of(t.head), t.predicate,
                             l->catalog.name_of(t.tail), to_string(t.origin), t.provenance,
                             ev.source_sentences.at(t.provenance));
}

EvalOptions eval_options(const Session& s, const fs::path& trace) {
    return {s.config.eval.sample_size, s.config.eval.workers, derive_seed(s.config.seed, 31), trace};
}

void write_results(Session& s, const std::string& stem, const std::vector<EvalResult>& results, bool curve) {
    fs::create_directories(s.files.results());
    const auto hash = s.config.hash();
    for (const auto& r : results) {
        std::string name = fmt::format("{}_{}_{}.csv", stem, r.variant, format_fixed(r.keep_fraction, 2));
        write_file(s.files.results() / name, per_question_csv(r, hash, s.config.seed));
    }
    write_file(s.files.results() / (stem + "_summary.json"), summary_json(results, hash, s.config.seed));
    if (curve) write_file(s.files.results() / (stem + ".csv"), curve_csv(results, hash, s.config.seed));
    for (const auto& r : results)
        s.out << fmt::format("{:<12} keep={} em={} f1={}\n", r.variant, format_fixed(r.keep_fraction, 2),
                             format_fixed(r.em, 4), format_fixed(r.f1, 4));
}

std::string dataset_name(const fs::path& p) { return p.stem().string(); }

} // namespace

int run_cli(int argc, const char* const* argv, const CliHooks& hooks) {
    std::ostream& out = hooks.out ? *hooks.out : std::cout;
    std::ostream& err = hooks.err ? *hooks.err : std::cerr;

    CLI::App app{"relink: query-time evidence graph construction for multi-hop QA"};
    app.require_subcommand(1);
    std::string config_path, transcript, log_level = "warn";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "global seed");
    app.add_option("--set", overrides, "override a config value, e.g. --set explore.K=8")->allow_extra_args(false);
    app.add_option("--transcript", transcript, "gateway transcript file (replay unless a mode is configured)");
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    auto* build_kg = app.add_subcommand("build-kg", "ingest the corpus and extract the factual graph");
    auto* build_pool = app.add_subcommand("build-pool", "build the latent relation pool");
    auto* train = app.add_subcommand("train", "train the ranker and projection adapters");
    auto* query = app.add_subcommand("query", "answer one question and print its evidence");
    std::string question;
    std::vector<std::string> topics;
    query->add_option("question", question, "question text")->required();
    query->add_option("--topic", topics, "topic entity id (repeatable)");
    auto* eval = app.add_subcommand("eval", "evaluate one pipeline variant on a dataset");
    std::string dataset, variant_name = "full", trace_path;
    double keep = 1.0;
    eval->add_option("--dataset", dataset, "JSON-lines QA file")->required();
    eval->add_option("--variant", variant_name, "full|wo_backbone|wo_pool|wo_ranker|wo_contra");
    eval->add_option("--keep-fraction", keep, "fraction of factual edges kept")->check(CLI::Range(0.0, 1.0));
    eval->add_option("--trace", trace_path, "write an exploration trace (JSON lines)");
    auto* ablate = app.add_subcommand("ablate", "evaluate the full model and every ablation");
    ablate->add_option("--dataset", dataset, "JSON-lines QA file")->required();
    auto* sweep = app.add_subcommand("sweep", "edge-removal robustness sweep (full vs wo_pool)");
    std::vector<double> fractions;
    sweep->add_option("--dataset", dataset, "JSON-lines QA file")->required();
    sweep->add_option("--fractions", fractions, "keep fractions")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(log_level));
        if (seed) overrides.push_back(fmt::format("seed={}", *seed));
        if (!transcript.empty()) overrides.push_back("gateway.transcript_path=\"" + transcript + "\"");
        PipelineConfig config = load_config(config_path, overrides);
        if (!transcript.empty() && config.gateway.transcript_mode == TranscriptMode::Off)
            config.gateway.transcript_mode = TranscriptMode::Replay;
        std::optional<Variant> variant;
        if (*eval) variant = parse_variant(variant_name);

        Session s = open_session(config, hooks, out);
        std::optional<WorkLock> lock;
        if (!*query) lock.emplace(config.paths.work_dir);

        if (*build_kg) cmd_build_kg(s);
        else if (*build_pool) cmd_build_pool(s);
        else if (*train) cmd_train(s);
        else if (*query) cmd_query(s, question, topics);
        else {
            const auto l = load_all(s);
            const auto res = resources(s, *l);
            const auto records = load_dataset(dataset);
            const auto name = dataset_name(dataset);
            if (*eval) {
                const GraphBackbone masked = apply_edge_mask(l->graph, keep, derive_seed(config.seed, 41));
                auto r = res;
                r.backbone = &masked;
                write_results(s, "eval", {run_eval(name, records, r, *variant, keep, eval_options(s, trace_path))},
                              false);
            } else if (*ablate) {
                std::vector<EvalResult> rs;
                for (Variant v : all_variants()) rs.push_back(run_eval(name, records, res, v, 1.0, eval_options(s, {})));
                write_results(s, "ablation", rs, true);
            } else if (*sweep) {
                if (fractions.empty()) fractions = config.eval.fractions;
                auto opts = eval_options(s, {});
                opts.seed = derive_seed(config.seed, 41);
                write_results(s, "sweep", sparsity_sweep(name, records, res, fractions, opts), true);
            }
            s.gateway->flush_transcript();
        }
        return 0;
    } catch (const Error& e) {
        err << fmt::format("error[{}]: {}\n", to_string(e.code()), e.what());
        return e.code() == ErrorCode::InvalidArgument || e.code() == ErrorCode::Config ? 2 : 1;
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << "\n";
        return 1;
    }
}

} // namespace relink
