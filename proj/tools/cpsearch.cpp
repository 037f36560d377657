// cpsearch: train, index, search and evaluate a prompt-tuned dual-encoder
// code search model.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "cpsearch/binary_io.hpp"
#include "cpsearch/diagnostics.hpp"
#include "cpsearch/retriever.hpp"
#include "cpsearch/trainer.hpp"

namespace {

using namespace cps;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) { write_file(path, text); }

struct VocabArgs {
    std::string corpus, out;
    std::size_t min_count = 1;
    std::size_t max_size = 50000;
};

int run_vocab(const VocabArgs& a) {
    const auto docs = load_jsonl(a.corpus);
    const auto vocab = build_vocab(docs, a.min_count, a.max_size);
    vocab.save(a.out);
    std::cout << "vocabulary size=" << vocab.size() << " documents=" << docs.size() << "\n";
    return 0;
}

struct TrainArgs {
    std::string corpus, vocab, out, config, base;
    std::optional<std::string> mode, scoring;
    std::optional<std::size_t> epochs, batch_size, kc, kt, d, layers, heads, max_len_code, max_len_query;
    std::optional<double> lr, tau, lambda, weight_decay;
    std::optional<std::uint64_t> seed;
};

TrainConfig effective_config(const TrainArgs& a) {
    TrainConfig c;
    if (!a.config.empty()) {
        std::string text;
        try {
            text = read_file(a.config);
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(a.config + ": malformed JSON: " + e.what());
        }
        c.merge_json(j);
    }
    if (a.mode) c.mode = parse_mode(*a.mode);
    if (a.scoring) c.scoring = parse_scoring(*a.scoring);
    if (a.epochs) c.epochs = *a.epochs;
    if (a.batch_size) c.batch_size = *a.batch_size;
    if (a.kc) c.kc = *a.kc;
    if (a.kt) c.kt = *a.kt;
    if (a.d) c.d = *a.d;
    if (a.layers) c.layers = *a.layers;
    if (a.heads) c.heads = *a.heads;
    if (a.max_len_code) c.max_len_code = *a.max_len_code;
    if (a.max_len_query) c.max_len_query = *a.max_len_query;
    if (a.lr) c.learning_rate = *a.lr;
    if (a.tau) c.tau = *a.tau;
    if (a.lambda) c.lambda = *a.lambda;
    if (a.weight_decay) c.weight_decay = *a.weight_decay;
    if (a.seed) c.seed = *a.seed;
    c.validate();
    return c;
}

int run_train(const TrainArgs& a) {
    const TrainConfig config = effective_config(a);
    const auto docs = load_jsonl(a.corpus);
    const auto vocab = Vocabulary::load(a.vocab);
    std::optional<Checkpoint> base;
    if (!a.base.empty()) base = load_checkpoint(a.base);
    const auto cp = train(docs, vocab, config, base ? &*base : nullptr, [](const EpochReport& r) {
        std::cout << "epoch=" << r.epoch << " loss=" << format_double(r.mean_loss) << std::endl;
    });
    save_checkpoint(cp, a.out);
    std::cout << "trainable_parameters=" << cp.trainable_parameter_count()
              << " total_parameters=" << cp.total_parameter_count() << "\n";
    return 0;
}

struct IndexArgs {
    std::string checkpoint, vocab, candidates, out;
};

int run_index(const IndexArgs& a) {
    const auto cp = load_checkpoint(a.checkpoint);
    const auto vocab = Vocabulary::load(a.vocab);
    const auto idx = build_index(cp, vocab, load_jsonl(a.candidates));
    save_index(idx, a.out);
    std::cout << "indexed " << idx.size() << " candidates\n";
    return 0;
}

struct SearchArgs {
    std::string checkpoint, vocab, index;
    std::optional<std::string> query;
    std::size_t top_k = 10;
    std::optional<double> lambda;
};

int run_search(const SearchArgs& a) {
    const auto cp = load_checkpoint(a.checkpoint);
    const auto vocab = Vocabulary::load(a.vocab);
    const auto idx = load_index(a.index);
    const double lambda = a.lambda.value_or(idx.lambda);
    auto answer = [&](const std::string& q) {
        const auto hits = search(idx, q, cp, vocab, a.top_k, lambda);
        for (std::size_t i = 0; i < hits.size(); ++i)
            std::cout << i + 1 << '\t' << hits[i].id << '\t' << format_double(hits[i].score) << '\n';
        std::cout.flush();
    };
    if (a.query) {
        answer(*a.query);
        return 0;
    }
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            answer(line);
        } catch (const DataError& e) {
            // One bad query should not end an interactive session.
            std::cerr << "error: " << e.what() << std::endl;
        }
    }
    return 0;
}

struct EvalArgs {
    std::string checkpoint, vocab, index, queries, out;
    std::optional<double> lambda;
};

int run_eval(const EvalArgs& a) {
    const auto cp = load_checkpoint(a.checkpoint);
    const auto vocab = Vocabulary::load(a.vocab);
    const auto idx = load_index(a.index);
    const auto report = evaluate(idx, queries_from(load_jsonl(a.queries)), cp, vocab, a.lambda.value_or(idx.lambda));
    const std::string json = report.to_json().dump(2) + "\n";
    if (!a.out.empty()) write_text(a.out, json);
    std::cout << "mrr=" << format_double(report.mrr) << " r@1=" << format_double(report.recall1)
              << " r@5=" << format_double(report.recall5) << " r@10=" << format_double(report.recall10)
              << " queries=" << report.num_queries << "\n";
    return 0;
}

struct DiagnoseArgs {
    std::string checkpoint, vocab, eval_set, name = "model", csv, json;
};

int run_diagnose(const DiagnoseArgs& a) {
    const auto cp = load_checkpoint(a.checkpoint);
    const auto vocab = Vocabulary::load(a.vocab);
    const auto report = quality_report(cp, vocab, load_jsonl(a.eval_set), a.name);
    const std::string csv = std::string(kQualityCsvHeader) + "\n" + report.csv_row() + "\n";
    if (!a.csv.empty()) write_text(a.csv, csv);
    if (!a.json.empty()) write_text(a.json, report.to_json().dump(2) + "\n");
    std::cout << csv;
    return 0;
}

struct GradCheckArgs {
    std::string mode = "pt", scoring = "interaction";
    std::uint64_t seed = 0;
    std::size_t samples = 200;
};

int run_gradcheck(const GradCheckArgs& a) {
    TrainConfig c;
    c.mode = parse_mode(a.mode);
    c.scoring = parse_scoring(a.scoring);
    c.d = 16;
    c.layers = 2;
    c.heads = 2;
    c.kc = c.kt = 4;
    c.batch_size = 4;
    c.max_len_code = c.max_len_query = 12;
    GradCheckOptions opts;
    opts.seed = a.seed;
    opts.samples_per_tensor = a.samples;
    const auto r = grad_check(c, opts);
    std::cout << "mode=" << to_string(c.mode) << " scoring=" << to_string(c.scoring) << " seed=" << a.seed
              << "\nchecked=" << r.coordinates_checked << " skipped=" << r.coordinates_skipped
              << " tensors=" << r.tensors.size() << "\nmax_rel_err=" << r.max_rel_err
              << " worst=" << r.worst_tensor << "[" << r.worst_index << "]\n";
    if (!r.passed(1e-4)) {
        std::cerr << "error: gradient check failed, max relative error " << r.max_rel_err << " in "
                  << r.worst_tensor << "\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt-tuned dual-encoder code search with token-level interaction scoring"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_version_flag("--version", "cpsearch 1.0");

    VocabArgs va;
    auto* vocab = app.add_subcommand("vocab", "Build a vocabulary from a JSONL corpus");
    vocab->add_option("--corpus", va.corpus, "JSONL corpus of {id?, code, doc} records")->required();
    vocab->add_option("--out", va.out, "Output vocabulary file")->required();
    vocab->add_option("--min-count", va.min_count, "Minimum token frequency")->capture_default_str();
    vocab->add_option("--max-size", va.max_size, "Maximum vocabulary size, reserved tokens included")
        ->capture_default_str();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train a model on a JSONL corpus");
    tr->add_option("--corpus", ta.corpus, "JSONL training corpus")->required();
    tr->add_option("--vocab", ta.vocab, "Vocabulary file")->required();
    tr->add_option("--out", ta.out, "Output checkpoint")->required();
    tr->add_option("--config", ta.config, "JSON file of hyperparameters (flags override it)");
    tr->add_option("--base", ta.base, "Checkpoint whose encoder serves as the frozen base (prompt mode)");
    tr->add_option("--mode", ta.mode, "ft (fine-tune) or pt (prompt-tune)");
    tr->add_option("--scoring", ta.scoring, "interaction or cosine");
    tr->add_option("--epochs", ta.epochs, "Training epochs");
    tr->add_option("--batch-size", ta.batch_size, "Pairs per batch");
    tr->add_option("--lr", ta.lr, "AdamW learning rate");
    tr->add_option("--tau", ta.tau, "InfoNCE temperature");
    tr->add_option("--lambda", ta.lambda, "Weight of the column factor in the match score");
    tr->add_option("--kc", ta.kc, "Code prompt length");
    tr->add_option("--kt", ta.kt, "Query prompt length");
    tr->add_option("--d", ta.d, "Hidden width");
    tr->add_option("--layers", ta.layers, "Transformer layers");
    tr->add_option("--heads", ta.heads, "Attention heads");
    tr->add_option("--max-len-code", ta.max_len_code, "Maximum code length in tokens");
    tr->add_option("--max-len-query", ta.max_len_query, "Maximum query length in tokens");
    tr->add_option("--weight-decay", ta.weight_decay, "AdamW decoupled weight decay");
    tr->add_option("--seed", ta.seed, "Random seed");

    IndexArgs ia;
    auto* ix = app.add_subcommand("index", "Encode candidate code into a search index");
    ix->add_option("--checkpoint", ia.checkpoint, "Trained checkpoint")->required();
    ix->add_option("--vocab", ia.vocab, "Vocabulary file")->required();
    ix->add_option("--candidates", ia.candidates, "JSONL candidate corpus")->required();
    ix->add_option("--out", ia.out, "Output index file")->required();

    SearchArgs sa;
    auto* se = app.add_subcommand("search", "Rank indexed code for a query (stdin: one query per line)");
    se->add_option("--checkpoint", sa.checkpoint, "Checkpoint the index was built from")->required();
    se->add_option("--vocab", sa.vocab, "Vocabulary file")->required();
    se->add_option("--index", sa.index, "Index file")->required();
    se->add_option("--query", sa.query, "Query text; omit to read queries from standard input");
    se->add_option("--top-k", sa.top_k, "Number of results")->capture_default_str();
    se->add_option("--lambda", sa.lambda, "Override the index's scoring weight");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Compute MRR and Recall@k over a query set");
    ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint the index was built from")->required();
    ev->add_option("--vocab", ea.vocab, "Vocabulary file")->required();
    ev->add_option("--index", ea.index, "Index file")->required();
    ev->add_option("--queries", ea.queries, "JSONL corpus; each doc text queries for its own id")->required();
    ev->add_option("--out", ea.out, "Output JSON report");
    ev->add_option("--lambda", ea.lambda, "Override the index's scoring weight");

    DiagnoseArgs da;
    auto* di = app.add_subcommand("diagnose", "Alignment, uniformity and MRR of a checkpoint");
    di->add_option("--checkpoint", da.checkpoint, "Checkpoint")->required();
    di->add_option("--vocab", da.vocab, "Vocabulary file")->required();
    di->add_option("--eval-set", da.eval_set, "JSONL evaluation pairs")->required();
    di->add_option("--name", da.name, "Model label in the report")->capture_default_str();
    di->add_option("--csv", da.csv, "Output CSV file");
    di->add_option("--json", da.json, "Output JSON file");

    GradCheckArgs ga;
    auto* gc = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients on a toy model");
    gc->add_option("--mode", ga.mode, "ft or pt")->capture_default_str();
    gc->add_option("--scoring", ga.scoring, "interaction or cosine")->capture_default_str();
    gc->add_option("--seed", ga.seed, "Random seed")->capture_default_str();
    gc->add_option("--samples", ga.samples, "Coordinates sampled per tensor")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (*vocab) return run_vocab(va);
        if (*tr) return run_train(ta);
        if (*ix) return run_index(ia);
        if (*se) return run_search(sa);
        if (*ev) return run_eval(ea);
        if (*di) return run_diagnose(da);
        if (*gc) return run_gradcheck(ga);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
