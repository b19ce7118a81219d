// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
//
//   acceptance              run everything
//   acceptance --only 3,9   run a subset
//   acceptance --stream-probe FILE   (internal) stream FILE and exit

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alm/eval.hpp"
#include "alm/io.hpp"
#include "alm/ops.hpp"
#include "alm/train.hpp"
#include "bpe_oracle.hpp"
#include "cli_runner.hpp"
#include "gradcheck.hpp"
#include "synthetic.hpp"
#include "tokenizer_fixtures.hpp"

using namespace alm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 6) {
    std::ostringstream ss;
    ss.precision(prec);
    ss << v;
    return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("alm_acceptance_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string file_bytes(const fs::path& p) { return alm::test::slurp(p); }

// Mean next-token loss over whole examples, eval mode.
double eval_loss(const GptModel& m, const std::vector<LmExample>& examples) {
    NoGradGuard ng;
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& ex : examples) {
        const double l = clm_loss(m.forward(ex.input), ex.target).item();
        total += l * static_cast<double>(ex.target.size());
        n += ex.target.size();
    }
    return total / static_cast<double>(n);
}

// ---- 1

Outcome parameter_count_anchor() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = alm::test::run_cli(scratch_dir(), "pretrain --preset 0.1B --dry-run");
    const double secs = seconds_since(t0);
    if (r.code != 0) return {false, "dry run exited " + std::to_string(r.code) + ": " + r.err};
    const auto reported = nlohmann::json::parse(r.out)["param_count"].get<std::uint64_t>();
    // independent tally: V*d + ctx*d + L*(attn 4d^2+4d, mlp 8d^2+5d, 2 norms 4d) + final norm 2d
    const std::uint64_t V = 64000, d = 768, ctx = 768, L = 12;
    const std::uint64_t per_layer = (d * 3 * d + 3 * d) + (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d) + 4 * d;
    const std::uint64_t tally = V * d + ctx * d + L * per_layer + 2 * d;
    const double rel = std::abs(static_cast<double>(reported) - 134e6) / 134e6;
    const bool pass = reported == 134797824ULL && reported == tally && rel < 0.01 && secs < 1.0;
    return {pass, "param_count=" + std::to_string(reported) + " tally=" + std::to_string(tally) +
                      " vs 134M rel=" + fmt(rel, 3) + " runtime=" + fmt(secs, 3) + "s"};
}

// ---- 2

Outcome init_loss_anchor() {
    const auto t0 = std::chrono::steady_clock::now();
    NoGradGuard ng;
    double big_loss = 0.0;
    {
        const auto m = GptModel::initialize(preset("0.1B"), 1);
        Rng rng(2);
        std::vector<int> ids(129);
        for (auto& id : ids) id = static_cast<int>(rng.below(64000));
        const std::vector<int> input(ids.begin(), ids.end() - 1), target(ids.begin() + 1, ids.end());
        big_loss = clm_loss(m.forward(input), target).item();
    }
    const double ln_big = std::log(64000.0);
    const double big_rel = std::abs(big_loss - ln_big) / ln_big;

    const auto toy = GptModel::initialize(alm::test::toy_config(2, 2, 8, 16, 8), 3);
    Rng rng(4);
    double toy_sum = 0.0;
    const int seqs = 200;
    for (int s = 0; s < seqs; ++s) {
        std::vector<int> ids(9);
        for (auto& id : ids) id = static_cast<int>(rng.below(16));
        toy_sum += clm_loss(toy.forward(std::vector<int>(ids.begin(), ids.end() - 1)),
                            std::vector<int>(ids.begin() + 1, ids.end()))
                       .item();
    }
    const double toy_loss = toy_sum / seqs;
    const double ln16 = std::log(16.0);
    const double toy_rel = std::abs(toy_loss - ln16) / ln16;
    const double secs = seconds_since(t0);
    const bool pass = big_rel < 0.02 && toy_rel < 0.005 && secs < 60.0;
    return {pass, "V=64000 loss=" + fmt(big_loss) + " (ln V=" + fmt(ln_big) + ", rel " + fmt(big_rel, 3) +
                      "); V=16 loss=" + fmt(toy_loss) + " (rel " + fmt(toy_rel, 3) + "); runtime=" + fmt(secs, 3) + "s"};
}

// ---- 3 and 9: overfit run

struct OverfitRun {
    double final_eval_loss = 0.0;
    std::size_t blocks = 0;
    std::size_t reproduced = 0;
    std::size_t vocab = 0;
    std::size_t corpus_tokens = 0;
    std::uint64_t params = 0;
    long steps = 0;
    std::string report;
    std::string checkpoint;
};

OverfitRun overfit_run(std::uint64_t seed) {
    const auto lex = alm::test::make_lexicon(301, 150);
    const auto docs = alm::test::make_corpus(lex, 100, 12, 302);
    const auto tok = TokenizerModel::train(docs, 500);
    const auto cfg = alm::test::toy_config(2, 2, 64, static_cast<int>(tok.vocab_size()), 64);
    auto m = GptModel::initialize(cfg, seed);
    // one training sequence per document: ids ++ eos
    std::vector<LmExample> examples;
    std::size_t corpus_tokens = 0;
    for (const auto& d : docs) {
        auto ids = tok.encode(d);
        ids.push_back(kEosId);
        corpus_tokens += ids.size();
        examples.push_back({std::vector<int>(ids.begin(), ids.end() - 1), std::vector<int>(ids.begin() + 1, ids.end())});
    }

    TrainConfig tc;
    tc.batch_size = 4;
    tc.seq_len = 64;
    tc.max_steps = 2000;
    tc.lr_initial = 3e-3;
    tc.seed = seed;
    tc.eval_every = 50;
    const auto rep = train_lm(m, examples, tc);

    OverfitRun out;
    out.vocab = tok.vocab_size();
    out.blocks = examples.size();
    out.corpus_tokens = corpus_tokens;
    out.params = param_count(cfg);
    out.steps = rep.steps;
    out.final_eval_loss = eval_loss(m, examples);
    for (const auto& ex : examples) {
        const std::vector<int> prompt(ex.input.begin(), ex.input.begin() + 4);
        auto full = ex.input;
        full.push_back(ex.target.back());
        out.reproduced += generate(m, prompt, full.size() - 4, Sampling::greedy(), 0) == full;
    }
    CheckpointHeader h;
    h.model_config = cfg;
    h.tokenizer_hash = tok.content_hash();
    h.step = rep.steps;
    h.seed = seed;
    h.metrics = {{"final_loss", rep.final_loss}, {"eval_loss", out.final_eval_loss}};
    const auto path = scratch_dir() / ("overfit_" + std::to_string(seed) + ".ckpt");
    save_checkpoint(path, h, m.params());
    out.checkpoint = file_bytes(path);
    fs::remove(path);
    out.report = rep.to_jsonl();
    return out;
}

std::optional<OverfitRun> first_overfit;

Outcome overfit_integration() {
    const auto t0 = std::chrono::steady_clock::now();
    first_overfit = overfit_run(7);
    const auto& r = *first_overfit;
    const double secs = seconds_since(t0);
    const bool pass = r.blocks == 100 && r.params > 50 * r.corpus_tokens && r.final_eval_loss < 0.1 &&
                      r.reproduced == r.blocks && r.steps <= 2000 && secs < 600.0;
    return {pass, "V=" + std::to_string(r.vocab) + " params=" + std::to_string(r.params) + " corpus_tokens=" +
                      std::to_string(r.corpus_tokens) + " steps=" + std::to_string(r.steps) +
                      " eval_loss=" + fmt(r.final_eval_loss, 4) + " greedy reproduced " + std::to_string(r.reproduced) +
                      "/" + std::to_string(r.blocks) + " sequences; runtime=" + fmt(secs, 3) + "s"};
}

// ---- 4

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_op;
    std::size_t ops = 0;
    for (const auto& c : alm::test::gradient_cases()) {
        Rng rng(mix_seed(404, ops++));
        for (int trial = 0; trial < 50; ++trial) {
            const double e = c.trial(rng);
            if (!(e <= worst)) worst = e, worst_op = c.name;
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-6 && secs < 120.0, std::to_string(ops) + " ops x 50 trials, worst rel error " + fmt(worst, 3) +
                                              " (" + worst_op + "); runtime=" + fmt(secs, 3) + "s"};
}

// ---- 5

Outcome tokenizer_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(505);
    std::uniform_int_distribution<int> budget(0, 50);
    int equal = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto docs = alm::test::random_corpus(rng, 200);
        const auto words = alm::test::oracle_words(docs);
        const std::size_t vocab = kNumSpecials + alm::test::base_alphabet_size(words) + budget(rng);
        const auto oracle = alm::test::brute_force_bpe(words, alm::test::specials_list(), vocab);
        const auto model = TokenizerModel::train(docs, vocab);
        bool same = model.vocab() == oracle.vocab && model.merges().size() == oracle.merges.size();
        for (std::size_t r = 0; same && r < model.merges().size(); ++r) {
            const auto& m = model.merges()[r];
            same = m.rank == static_cast<int>(r) && m.left == oracle.merges[r].first &&
                   m.right == oracle.merges[r].second;
        }
        equal += same;
    }

    const auto docs = alm::test::random_corpus(rng, 400);
    const auto model = TokenizerModel::train(docs, 120);
    const std::u32string alphabet = U"ابتكلمنوير  ";
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    int roundtrips = 0;
    for (int i = 0; i < 10000; ++i) {
        std::u32string s(static_cast<std::size_t>(i % 30), U' ');
        for (auto& c : s) c = alphabet[pick(rng)];
        const std::string text = utf8::encode(s);
        roundtrips += model.decode(model.encode(text)) == normalize(text).text;
    }
    const double secs = seconds_since(t0);
    return {equal == 100 && roundtrips == 10000 && secs < 300.0,
            "oracle equal on " + std::to_string(equal) + "/100 corpora; roundtrip " + std::to_string(roundtrips) +
                "/10000; runtime=" + fmt(secs, 3) + "s"};
}

// ---- 6

Outcome causality_property() {
    Rng rng(606);
    int exact = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int H = 1 + static_cast<int>(rng.below(2));
        const int d = H * (2 + static_cast<int>(rng.below(4)));
        const int V = 8 + static_cast<int>(rng.below(25));
        const int ctx = 4 + static_cast<int>(rng.below(9));
        const auto m = GptModel::initialize(
            alm::test::toy_config(1 + static_cast<int>(rng.below(3)), H, d, V, ctx), static_cast<std::uint64_t>(trial));
        const std::size_t T = 2 + rng.below(static_cast<std::uint64_t>(ctx - 1));
        std::vector<int> ids(T);
        for (auto& id : ids) id = static_cast<int>(rng.below(static_cast<std::uint64_t>(V)));
        const auto a = m.forward(ids);
        const std::size_t t = 1 + rng.below(T - 1);
        ids[t] = (ids[t] + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(V - 1)))) % V;
        const auto b = m.forward(ids);
        bool same = true;
        for (std::size_t i = 0; i < t * static_cast<std::size_t>(V); ++i) same &= a.data()[i] == b.data()[i];
        exact += same;
    }
    return {exact == 100, std::to_string(exact) + "/100 perturbations left earlier logits bit-identical"};
}

// ---- 7

Outcome metric_goldens() {
    const double f1 = f1_bleu_rouge(0.2, 0.3);
    const double self = bleu("ا ب ت ث ج", "ا ب ت ث ج");
    const double r1 = rouge_n("a b c", "a b d", 1);

    const std::vector<std::string> docs{"ا ب ت ث ا ب ت ث"};
    const auto tok = TokenizerModel::train(docs, 40);
    auto m = GptModel::initialize(alm::test::toy_config(1, 1, 4, static_cast<int>(tok.vocab_size()), 16), 1);
    for (double& v : m.params().at("tok_emb").data()) v = 0.0;  // every logit 0: uniform
    McTask task;
    task.records.push_back({"ا ب", {"ا", "ب", "ت", "ث"}, {1}});
    const double mc2 = fewshot_eval(m, tok, task, 0, McMetric::mc2, 0).value;

    const bool pass = f1 == 0.24 && self == 1.0 && r1 == 2.0 / 3.0 && mc2 == 0.25;
    return {pass, "f1(0.2,0.3)=" + fmt(f1, 17) + " bleu(s,s)=" + fmt(self, 17) + " rouge_1=" + fmt(r1, 17) +
                      " mc2=" + fmt(mc2, 17)};
}

// ---- 8 and 9: sentiment protocol

struct SentimentRun {
    std::size_t train_size = 0, test_size = 0;
    double base_accuracy = 0.0, base_mean_margin = 0.0, accuracy = 0.0;
    long steps = 0;
    std::string report;
    std::string checkpoint;
};

double test_accuracy(const Classifier& clf, const TokenizerModel& tok, const std::vector<LabeledText>& data,
                     double* mean_margin = nullptr) {
    std::vector<int> pred, gold;
    double margin = 0.0;
    for (const auto& r : data) {
        const auto p = classify(clf, tok, r.text);
        pred.push_back(p.label);
        gold.push_back(r.label);
        margin += std::abs(p.score - 0.5);
    }
    if (mean_margin) *mean_margin = margin / static_cast<double>(data.size());
    return accuracy(pred, gold);
}

SentimentRun sentiment_run(std::uint64_t seed) {
    const auto lex = alm::test::make_lexicon(808, 120);
    // words 0-39 carry label 0, 40-79 label 1, 80-119 are shared filler
    std::vector<LabeledText> records;
    Rng rng(809);
    for (int i = 0; i < 750; ++i) {
        const int label = i % 2;
        std::vector<std::string> words;
        for (int k = 0; k < 3; ++k) words.push_back(lex[static_cast<std::size_t>(label * 40) + rng.below(40)]);
        for (int k = 0; k < 3; ++k) words.push_back(lex[80 + rng.below(40)]);
        rng.shuffle(words);
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        records.push_back({text, label});
    }
    std::vector<std::string> texts;
    for (const auto& r : records) texts.push_back(r.text);
    const auto tok = TokenizerModel::train(texts, 400);
    auto [train, test] = split(records, 0.70, seed);

    const auto cfg = alm::test::toy_config(2, 2, 32, static_cast<int>(tok.vocab_size()), 32);
    auto clf = Classifier::attach(GptModel::initialize(cfg, seed), seed);
    SentimentRun out;
    out.train_size = train.size();
    out.test_size = test.size();
    out.base_accuracy = test_accuracy(clf, tok, test, &out.base_mean_margin);

    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    tc.lr_initial = 3e-3;
    tc.seed = seed;
    const auto rep = finetune_classifier(clf, tok, train, tc);
    out.steps = rep.steps;
    out.accuracy = test_accuracy(clf, tok, test);

    CheckpointHeader h;
    h.kind = CheckpointKind::classifier;
    h.model_config = cfg;
    h.tokenizer_hash = tok.content_hash();
    h.step = rep.steps;
    h.seed = seed;
    h.metrics = {{"accuracy", out.accuracy}, {"final_loss", rep.final_loss}};
    const auto path = scratch_dir() / ("sentiment_" + std::to_string(seed) + ".ckpt");
    save_checkpoint(path, h, clf.all_params());
    out.checkpoint = file_bytes(path);
    fs::remove(path);
    out.report = rep.to_jsonl();
    return out;
}

std::optional<SentimentRun> first_sentiment;

Outcome sentiment_protocol() {
    const auto t0 = std::chrono::steady_clock::now();
    first_sentiment = sentiment_run(11);
    const auto& r = *first_sentiment;
    const double secs = seconds_since(t0);
    const bool pass = r.train_size == 525 && r.test_size == 225 && r.base_accuracy >= 0.35 &&
                      r.base_accuracy <= 0.65 && r.accuracy >= 0.95 && secs < 600.0;
    return {pass, "split " + std::to_string(r.train_size) + "/" + std::to_string(r.test_size) + ", " +
                      std::to_string(r.steps) + " steps (3 epochs); held-out accuracy " + fmt(r.base_accuracy, 4) +
                      " -> " + fmt(r.accuracy, 4) + " (untrained mean |score-0.5| " + fmt(r.base_mean_margin, 3) +
                      "); runtime=" + fmt(secs, 3) + "s"};
}

// ---- 9

Outcome determinism() {
    if (!first_overfit) first_overfit = overfit_run(7);
    if (!first_sentiment) first_sentiment = sentiment_run(11);
    const auto o = overfit_run(7);
    const auto s = sentiment_run(11);
    const bool ockpt = o.checkpoint == first_overfit->checkpoint, orep = o.report == first_overfit->report;
    const bool sckpt = s.checkpoint == first_sentiment->checkpoint, srep = s.report == first_sentiment->report;
    const bool smetric = s.accuracy == first_sentiment->accuracy && s.base_accuracy == first_sentiment->base_accuracy;
    auto yn = [](bool b) { return b ? "identical" : "DIFFERENT"; };
    return {ockpt && orep && sckpt && srep && smetric,
            std::string("overfit checkpoint ") + yn(ockpt) + ", report " + yn(orep) + "; sentiment checkpoint " +
                yn(sckpt) + ", report " + yn(srep) + ", accuracies " + yn(smetric)};
}

// ---- 10

void write_corpus(const fs::path& p, std::size_t bytes) {
    const auto lex = alm::test::make_lexicon(1010, 500);
    Rng rng(1011);
    std::ofstream out(p, std::ios::binary);
    std::string line;
    std::size_t written = 0;
    while (written < bytes) {
        line.clear();
        const std::size_t n = 5 + rng.below(20);
        for (std::size_t k = 0; k < n; ++k) line += (k ? " " : "") + lex[rng.below(lex.size())];
        line += '\n';
        if (rng.below(50) == 0) line += "\n";  // occasional blank line
        out << line;
        written += line.size();
    }
}

struct ProbeResult {
    long max_rss_kb = -1;
    int status = -1;
};

// Fresh process image so the parent's heap does not count toward the peak.
ProbeResult probe(const fs::path& file) {
    ProbeResult r;
    const pid_t pid = ::fork();
    if (pid == 0) {
        const std::string arg = file.string();
        if (std::FILE* null = std::fopen("/dev/null", "w")) ::dup2(::fileno(null), STDOUT_FILENO);
        ::execl("/proc/self/exe", "acceptance", "--stream-probe", arg.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    int status = 0;
    rusage usage{};
    ::wait4(pid, &status, 0, &usage);
    r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.max_rss_kb = usage.ru_maxrss;
    return r;
}

int stream_probe(const char* path) {
    CorpusStream s(path);
    std::string doc;
    std::size_t bytes = 0;
    while (s.next(doc)) bytes += doc.size();
    std::printf("%zu %zu\n", s.documents(), bytes);
    return 0;
}

Outcome streaming_bound() {
    constexpr long kBoundKb = 256 * 1024;
    const auto small = scratch_dir() / "corpus_10mb.txt";
    const auto large = scratch_dir() / "corpus_100mb.txt";
    write_corpus(small, 10u << 20);
    write_corpus(large, 100u << 20);
    const auto a = probe(small);
    const auto b = probe(large);
    fs::remove(small);
    fs::remove(large);
    const long growth = b.max_rss_kb - a.max_rss_kb;
    const bool pass = a.status == 0 && b.status == 0 && a.max_rss_kb < kBoundKb && b.max_rss_kb < kBoundKb &&
                      growth < 8 * 1024;
    return {pass, "peak RSS 10MB file " + std::to_string(a.max_rss_kb / 1024) + " MB, 100MB file " +
                      std::to_string(b.max_rss_kb / 1024) + " MB (bound 256 MB, growth " + std::to_string(growth) +
                      " KB)"};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc == 3 && std::string(argv[1]) == "--stream-probe") return stream_probe(argv[2]);
    std::set<int> only;
    if (argc == 3 && std::string(argv[1]) == "--only") {
        std::stringstream ss(argv[2]);
        std::string item;
        while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"parameter-count anchor", parameter_count_anchor},
        {"init-loss anchor", init_loss_anchor},
        {"overfit integration", overfit_integration},
        {"gradient suite", gradient_suite},
        {"tokenizer oracle", tokenizer_oracle},
        {"causality property", causality_property},
        {"metric goldens", metric_goldens},
        {"sentiment protocol mirror", sentiment_protocol},
        {"determinism", determinism},
        {"streaming bound", streaming_bound},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << "ACCEPTANCE " << id << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first
                  << "] " << o.detail << " (" << fmt(seconds_since(t0), 3) << "s)" << std::endl;
    }
    fs::remove_all(scratch_dir());
    return failed == 0 ? 0 : 1;
}
