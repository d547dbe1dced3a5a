// End-to-end acceptance checks. Prints one PASS / FAIL / NOT RUN line per
// criterion and exits non-zero when any criterion fails.
//
// Environment:
//   FSKWS_DATA_DIR     Speech Commands v2 root; enables criteria 4, 5 and 6
//   FSKWS_FULL_REPRO   set to 1 to run the full-profile criterion 6
//   FSKWS_SKIP_FIXTURE set to 1 to skip the published-scale fixture run

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "fskws/checkpoint.hpp"
#include "fskws/cli.hpp"
#include "fskws/dataset.hpp"
#include "fskws/episodes.hpp"
#include "fskws/error.hpp"
#include "fskws/features.hpp"
#include "fskws/gradcheck.hpp"
#include "fskws/nets.hpp"
#include "fskws/ops.hpp"
#include "fskws/protonet.hpp"
#include "fskws/trainer.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fskws;
using ad::Tensor;
using nets::ArchitectureKind;

namespace {

enum class Status { Pass, Fail, NotRun };

struct Outcome {
  Status status = Status::NotRun;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? v : nullptr;
}

// Collects failures of individual checks inside one criterion.
struct Checks {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  Outcome outcome() const {
    std::string d;
    for (const auto& f : failures) d += (d.empty() ? "" : "; ") + f;
    for (const auto& n : notes) d += (d.empty() ? "" : "; ") + n;
    return {failures.empty() ? Status::Pass : Status::Fail, d};
  }
};

Tensor<double> random_tensor(ad::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

// Weighted sum with fixed random weights, so every output element matters.
Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed, "probe");
  std::vector<double> w(y.numel());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return ad::sum(ad::mul(y, Tensor<double>::from_data(y.shape(), std::move(w))));
}

// ------------------------------------------------------------ criterion 1

Outcome numeric_core() {
  const auto t0 = Clock::now();
  Checks c;
  constexpr double kStep = 1e-4, kTol = 1e-4;
  ad::GradCheckOptions opt;
  opt.step = kStep;
  const Tensor<double> none;

  auto op_check = [&](const std::string& name, const std::function<Tensor<double>()>& f,
                      std::vector<ad::NamedTensor<double>> wrt) {
    const auto r = ad::grad_check<double>(f, std::move(wrt), opt);
    c.expect(r.max_rel_error() < kTol, "op " + name + " rel err " + fmt("%.2e", r.max_rel_error()));
  };

  Rng rng(1001);
  {
    for (std::size_t dil : {1u, 2u, 4u}) {
      for (std::size_t stride : {1u, 2u}) {
        auto x = random_tensor({2, 3, 19}, rng);
        auto w = random_tensor({4, 3, 3}, rng);
        auto b = random_tensor({4}, rng);
        const ad::Conv1dOptions o{stride, dil, dil};
        op_check("conv1d d" + std::to_string(dil) + " s" + std::to_string(stride),
                 [&] { return probe(ad::conv1d(x, w, b, o), 1); }, {{"x", x}, {"w", w}, {"b", b}});
      }
    }
    auto x = random_tensor({2, 2, 7, 6}, rng);
    auto w = random_tensor({3, 2, 3, 2}, rng);
    auto b = random_tensor({3}, rng);
    op_check("conv2d", [&] { return probe(ad::conv2d(x, w, b, {1, 2, 1, 0}), 2); }, {{"x", x}, {"w", w}, {"b", b}});

    auto xb = random_tensor({4, 3, 5}, rng);
    auto g = random_tensor({3}, rng, 0.5, 1.5);
    auto be = random_tensor({3}, rng);
    ad::BatchNormState<double> st(3);
    op_check("batch_norm", [&] { return probe(ad::batch_norm(xb, g, be, st, ad::Mode::Train), 3); },
             {{"x", xb}, {"gamma", g}, {"beta", be}});

    auto xr = random_tensor({3, 8}, rng);
    op_check("relu", [&] { return probe(ad::relu(xr), 4); }, {{"x", xr}});
    auto xp = random_tensor({2, 2, 6, 6}, rng);
    op_check("max_pool2d", [&] { return probe(ad::max_pool2d(xp, {2, 3, 2, 3}), 5); }, {{"x", xp}});
    auto xg = random_tensor({2, 3, 7}, rng);
    op_check("global_avg_pool", [&] { return probe(ad::global_avg_pool(xg), 6); }, {{"x", xg}});
    auto xl = random_tensor({3, 5}, rng);
    auto wl = random_tensor({4, 5}, rng);
    auto bl = random_tensor({4}, rng);
    op_check("linear", [&] { return probe(ad::linear(xl, wl, bl), 7); }, {{"x", xl}, {"w", wl}, {"b", bl}});
    auto xf = random_tensor({2, 3, 2}, rng);
    op_check("flatten", [&] { return probe(ad::flatten(xf), 8); }, {{"x", xf}});
    auto a1 = random_tensor({3, 4}, rng), a2 = random_tensor({3, 4}, rng);
    op_check("add", [&] { return probe(ad::add(a1, a2), 9); }, {{"a", a1}, {"b", a2}});
    op_check("mul", [&] { return probe(ad::mul(a1, a2), 10); }, {{"a", a1}, {"b", a2}});
    op_check("scale", [&] { return probe(ad::scale(a1, -0.7), 11); }, {{"a", a1}});
    op_check("slice_rows", [&] { return probe(ad::slice_rows(a1, 1, 3), 12); }, {{"a", a1}});
    const std::vector<int> lab{0, 1, 2, 1, 0, 2};
    auto xm = random_tensor({6, 4}, rng);
    op_check("class_means", [&] { return probe(ad::class_means(xm, lab, 3), 13); }, {{"x", xm}});
    auto q = random_tensor({5, 4}, rng), p = random_tensor({3, 4}, rng);
    op_check("squared_euclidean", [&] { return probe(ad::squared_euclidean(q, p), 14); }, {{"q", q}, {"p", p}});
    auto z = random_tensor({4, 5}, rng, -5.0, 5.0);
    op_check("log_softmax_rows", [&] { return probe(ad::log_softmax_rows(z), 15); }, {{"z", z}});
    const std::vector<int> nl{1, 0, 4, 2};
    op_check("nll_loss", [&] { return ad::nll_loss(ad::log_softmax_rows(z), nl); }, {{"z", z}});
  }

  for (auto kind : {ArchitectureKind::TdResNet7, ArchitectureKind::TcResNet8, ArchitectureKind::CnnTradFpool3,
                    ArchitectureKind::C64}) {
    nets::Network<double> net(nets::spec_for(kind), 51);
    ad::Shape shape{3};
    shape.insert(shape.end(), net.spec().input_shape.begin(), net.spec().input_shape.end());
    auto x = random_tensor(shape, rng, -1.0, 1.0);
    auto r = random_tensor({3, net.embedding_dim()}, rng, -1.0, 1.0);
    std::vector<ad::NamedTensor<double>> wrt;
    for (auto& prm : net.parameters()) wrt.push_back({prm.name, prm.tensor});
    wrt.push_back({"input", x});
    ad::GradCheckOptions nopt = opt;
    nopt.max_elements_per_tensor = kind == ArchitectureKind::CnnTradFpool3 ? 4 : 6;
    nopt.seed = 54;
    const auto rep =
        ad::grad_check<double>([&] { return ad::sum(ad::mul(net.forward(x, ad::Mode::Train), r)); }, wrt, nopt);
    std::string worst;
    double worst_err = 0.0, worst_abs = 0.0;
    for (const auto& e : rep.entries) {
      if (e.max_rel_error > worst_err) worst_err = e.max_rel_error, worst_abs = e.max_abs_error, worst = e.name;
    }
    const std::string name(nets::kind_name(kind));
    c.expect(worst_err < kTol,
             name + " rel err " + fmt("%.2e", worst_err) + " (abs " + fmt("%.1e", worst_abs) + ") at " + worst);
    if (worst_err < kTol) c.notes.push_back(name + " max rel err " + fmt("%.1e", worst_err));
  }

  {
    Rng r2(1002);
    bool exact = true;
    for (int trial = 0; trial < 40 && exact; ++trial) {
      const std::size_t B = 1 + r2.uniform_index(3), C = 1 + r2.uniform_index(4), O = 1 + r2.uniform_index(4);
      const std::size_t K = 1 + r2.uniform_index(7), L = K + r2.uniform_index(30);
      const std::size_t stride = 1 + r2.uniform_index(2), pad = r2.uniform_index(4);
      auto x = random_tensor({B, C, L}, r2);
      auto w = random_tensor({O, C, K}, r2);
      const auto y = ad::conv1d(x, w, none, {stride, 1, pad});
      const auto ref = oracle::naive_conv1d(x.data(), B, C, L, w.data(), O, K, stride, 1, pad);
      for (std::size_t i = 0; i < ref.size(); ++i) exact = exact && y.data()[i] == ref[i];
    }
    c.expect(exact, "conv1d differs from the sliding-window oracle");
  }

  {
    Rng r3(1003);
    double worst = 0.0;
    for (int clip = 0; clip < 50; ++clip) {
      std::vector<float> s(audio::kClipSamples);
      const double amp = r3.uniform(0.01, 1.0);
      for (auto& v : s) v = static_cast<float>(r3.uniform(-amp, amp));
      const audio::AudioClip a(std::move(s));
      const auto got = features::mfcc(a);
      const auto ref = oracle::naive_mfcc(a.samples());
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(got.values()[i] - ref[i]));
    }
    c.expect(worst < 1e-6, "mfcc deviates by " + fmt("%.2e", worst));
  }

  {
    Rng r4(1004);
    double worst_sum = 0.0, worst_dist = 0.0, worst_mean = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t M = 1 + r4.uniform_index(12), C = 2 + r4.uniform_index(8), D = 1 + r4.uniform_index(48);
      const auto lp = ad::log_softmax_rows(random_tensor({M, C}, r4, -80.0, 80.0));
      for (std::size_t m = 0; m < M; ++m) {
        double s = 0.0;
        for (std::size_t k = 0; k < C; ++k) s += std::exp(lp.data()[m * C + k]);
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
      std::vector<int> labels(C * 3);
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % C);
      const auto support = random_tensor({labels.size(), D}, r4);
      const auto protos = protonet::compute_prototypes(support, labels, C);
      const auto means = oracle::naive_class_means(support.data(), D, labels, C);
      for (std::size_t i = 0; i < means.size(); ++i)
        worst_mean = std::max(worst_mean, std::abs(protos.prototypes.data()[i] - means[i]));
      const auto queries = random_tensor({M, D}, r4);
      const auto d = protonet::squared_euclidean(queries, protos);
      const auto ref = oracle::naive_squared_distances(queries.data(), M, protos.prototypes.data(), C, D);
      for (std::size_t i = 0; i < ref.size(); ++i) worst_dist = std::max(worst_dist, std::abs(d.data()[i] - ref[i]));
    }
    c.expect(worst_sum < 1e-6, "softmax rows off by " + fmt("%.2e", worst_sum));
    c.expect(worst_mean < 1e-6, "prototypes off by " + fmt("%.2e", worst_mean));
    c.expect(worst_dist < 1e-6, "distances off by " + fmt("%.2e", worst_dist));
  }

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 120.0, "took " + fmt("%.0f s", elapsed));
  c.notes.push_back(fmt("%.0f s", elapsed));
  return c.outcome();
}

// ------------------------------------------------------------ criterion 2

Outcome shape_laws() {
  Checks c;
  const auto fm = features::mfcc(audio::generate_tone(440.0, 1.0, 0.5));
  c.expect(fm.frames() == 49 && fm.coeffs() == 40, "one-second clip gives " + std::to_string(fm.frames()) + "x" +
                                                       std::to_string(fm.coeffs()) + " features");

  const auto td = nets::trace_shapes(nets::td_resnet7_spec(), 2);
  c.expect(td.back() == ad::Shape{2, 48}, "td-resnet7 embedding is not 48-dim");
  bool length_kept = true;
  for (std::size_t i = 0; i + 1 < td.size(); ++i) length_kept = length_kept && td[i].size() == 3 && td[i][2] == 49;
  c.expect(length_kept, "td-resnet7 changes the temporal length before pooling");
  c.expect(nets::trace_shapes(nets::tc_resnet8_spec(), 2).back() == ad::Shape{2, 48}, "tc-resnet8 embedding width");
  c.expect(nets::trace_shapes(nets::cnn_trad_fpool3_spec(), 2).back() == ad::Shape{2, 128},
           "cnn-trad-fpool3 embedding width");
  c.expect(nets::trace_shapes(nets::c64_spec(), 2).back() == ad::Shape{2, 384}, "c64 embedding is not 384-dim");

  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k; };
  auto bn = [](std::size_t ch) { return 2 * ch; };
  auto block = [&](std::size_t in, std::size_t out, std::size_t k) {
    return conv(in, out, k) + bn(out) + conv(out, out, k) + bn(out) + conv(in, out, 1) + bn(out);
  };
  const std::size_t stem = conv(40, 16, 3) + bn(16);
  const std::map<ArchitectureKind, std::size_t> expected{
      {ArchitectureKind::TdResNet7, stem + block(16, 24, 7) + block(24, 32, 7) + block(32, 48, 7)},
      {ArchitectureKind::TcResNet8, stem + block(16, 24, 9) + block(24, 32, 9) + block(32, 48, 9)},
      {ArchitectureKind::CnnTradFpool3,
       (20 * 8 * 64 + 64) + (64 * 10 * 4 * 64 + 64) + (10752 * 32 + 32) + (32 * 128 + 128)},
      {ArchitectureKind::C64, (9 * 64 + 64 + 128) + 3 * (64 * 9 * 64 + 64 + 128)}};
  for (const auto& [kind, count] : expected) {
    const auto got = nets::Network<float>(nets::spec_for(kind), 1).param_count();
    c.expect(got == count, std::string(nets::kind_name(kind)) + " has " + std::to_string(got) + " parameters, expected " +
                               std::to_string(count));
    c.notes.push_back(std::string(nets::kind_name(kind)) + " " + std::to_string(got) + " params");
  }
  return c.outcome();
}

// ------------------------------------------------------------ criterion 3

Outcome tone_overfit() {
  const auto t0 = Clock::now();
  Checks c;
  episodes::ToneEpisodeSource source;  // 200 Hz vs 2 kHz in every phase
  auto cfg = trainer::desk_profile();
  cfg.epochs = 1;
  cfg.train_episodes_per_epoch = 50;
  cfg.val_episodes_per_epoch = 5;
  cfg.test_episodes = 100;
  cfg.n_way = 2;
  cfg.k_shot = 1;
  cfg.seed = 2024;
  std::vector<double> acc;
  trainer::TrainHooks hooks;
  hooks.on_episode = [&](const trainer::EpisodeRecord& r) { acc.push_back(r.accuracy); };
  const auto trained = trainer::train(source, ArchitectureKind::TdResNet7, cfg, hooks);
  std::size_t first = 0;
  while (first < acc.size() && acc[first] < 0.99) ++first;
  c.expect(!acc.empty() && acc.back() >= 0.99, "final training-episode accuracy " + fmt("%.3f", acc.back()));
  c.notes.push_back(first < acc.size() ? "first >=0.99 training episode " + std::to_string(first + 1)
                                       : std::string("never reached 0.99"));
  auto net = checkpoint::instantiate(trained.best);
  const auto test = trainer::evaluate(net, source, cfg);
  c.expect(test.mean_accuracy == 1.0, "held-out test accuracy " + fmt("%.4f", test.mean_accuracy));
  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 300.0, "took " + fmt("%.0f s", elapsed));
  c.notes.push_back("test accuracy " + fmt("%.4f", test.mean_accuracy) + " over 100 episodes, " +
                    fmt("%.0f s", elapsed));
  return c.outcome();
}

// ------------------------------------------------------------ criterion 4

Outcome manifest_fidelity(const fs::path& root, const fs::path& out) {
  const auto t0 = Clock::now();
  Checks c;
  const auto result = dataset::synthesize_manifest(root, out, 42);
  const auto& m = result.manifest;
  std::map<std::string, std::size_t> core_count, unknown_count;
  std::map<std::string, std::set<dataset::Phase>> core_phases;
  std::map<std::string, std::set<std::string>> speakers;
  std::map<std::string, std::size_t> entries_per_keyword;
  std::size_t silence = 0;
  for (const auto& e : m.entries) {
    switch (e.role) {
      case dataset::Role::Core:
        ++core_count[e.keyword];
        core_phases[e.keyword].insert(e.phase);
        break;
      case dataset::Role::Unknown: ++unknown_count[e.keyword]; break;
      case dataset::Role::Silence: ++silence; break;
    }
    if (e.role != dataset::Role::Silence) {
      speakers[e.keyword].insert(e.speaker_id);
      ++entries_per_keyword[e.keyword];
    }
  }
  c.expect(core_count.size() == 30, std::to_string(core_count.size()) + " core keywords");
  for (const auto& [kw, n] : core_count) c.expect(n == 1062, kw + " has " + std::to_string(n) + " samples");
  c.expect(unknown_count.size() == 5, std::to_string(unknown_count.size()) + " unknown keywords");
  for (const auto& [kw, n] : unknown_count) c.expect(n == 386, kw + " has " + std::to_string(n) + " samples");

  std::array<std::size_t, 3> split{};
  for (const auto& [kw, phases] : core_phases) {
    c.expect(phases.size() == 1, kw + " spans several phases");
    if (phases.size() == 1) ++split[static_cast<std::size_t>(*phases.begin())];
  }
  c.expect(split == std::array<std::size_t, 3>{20, 5, 5}, "core split " + std::to_string(split[0]) + "/" +
                                                              std::to_string(split[1]) + "/" + std::to_string(split[2]));
  c.expect(silence == 1000, std::to_string(silence) + " silence clips");

  std::set<std::string> want_core, want_unknown, got_core, got_unknown;
  for (const auto& k : dataset::kPublishedCore) want_core.emplace(k.keyword);
  for (const auto& k : dataset::kPublishedUnknown) want_unknown.emplace(k.keyword);
  for (const auto& [kw, n] : core_count) got_core.insert(kw);
  for (const auto& [kw, n] : unknown_count) got_unknown.insert(kw);
  c.expect(got_core == want_core, "core keyword identities differ from the published list");
  c.expect(got_unknown == want_unknown, "unknown keyword identities differ from the published list");
  for (const auto& [kw, spk] : speakers) {
    c.expect(spk.size() == entries_per_keyword[kw], kw + " repeats a speaker");
  }
  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 600.0, "took " + fmt("%.0f s", elapsed));
  c.notes.push_back(std::to_string(m.entries.size()) + " entries, " + fmt("%.0f s", elapsed));
  return c.outcome();
}

// ------------------------------------------------------------ criteria 5, 6

struct DataRun {
  fs::path work;
  std::unique_ptr<episodes::ManifestEpisodeSource> source;
};

DataRun prepare_real_data(const fs::path& root) {
  DataRun r;
  r.work = fixture::temp_dir("acceptance-data");
  const auto result = dataset::synthesize_manifest(root, r.work / "manifest", 42);
  r.source = std::make_unique<episodes::ManifestEpisodeSource>(result.manifest);
  return r;
}

trainer::EvalResult train_and_test(episodes::EpisodeSource& source, ArchitectureKind arch, trainer::TrainConfig cfg) {
  trainer::TrainHooks hooks;
  hooks.on_epoch = [&](const trainer::EpochLog& e) {
    std::fprintf(stderr, "  %s %zuw%zus epoch %zu val %.4f\n", std::string(nets::kind_name(arch)).c_str(), cfg.n_way,
                 cfg.k_shot, e.epoch + 1, e.val_acc);
  };
  const auto trained = trainer::train(source, arch, cfg, hooks);
  auto net = checkpoint::instantiate(trained.best);
  return trainer::evaluate(net, source, cfg);
}

Outcome desk_reproduction(DataRun& data) {
  Checks c;
  auto cfg = trainer::desk_profile();
  cfg.seed = 7;
  cfg.case_ = trainer::Case::A;
  cfg.n_way = 2;
  cfg.k_shot = 5;
  const auto two = train_and_test(*data.source, ArchitectureKind::TdResNet7, cfg);
  cfg.n_way = 4;
  cfg.k_shot = 1;
  const auto four = train_and_test(*data.source, ArchitectureKind::TdResNet7, cfg);
  c.expect(two.mean_accuracy >= 0.85, "2-way 5-shot " + fmt("%.4f", two.mean_accuracy) + " < 0.85");
  c.expect(four.mean_accuracy >= 0.62, "4-way 1-shot " + fmt("%.4f", four.mean_accuracy) + " < 0.62");
  c.notes.push_back("2w5s " + fmt("%.4f", two.mean_accuracy) + ", 4w1s " + fmt("%.4f", four.mean_accuracy));
  return c.outcome();
}

Outcome full_reproduction(DataRun& data) {
  Checks c;
  auto cfg = trainer::full_profile();
  cfg.seed = 7;
  cfg.case_ = trainer::Case::A;
  cfg.n_way = 2;
  cfg.k_shot = 5;
  const auto td2 = train_and_test(*data.source, ArchitectureKind::TdResNet7, cfg);
  c.expect(std::abs(100.0 * td2.mean_accuracy - 94.10) <= 3.0,
           "td-resnet7 2w5s " + fmt("%.2f", 100.0 * td2.mean_accuracy) + " outside 94.10 +- 3.0");
  cfg.n_way = 4;
  cfg.k_shot = 1;
  const auto td4 = train_and_test(*data.source, ArchitectureKind::TdResNet7, cfg);
  const auto c64 = train_and_test(*data.source, ArchitectureKind::C64, cfg);
  const auto trad = train_and_test(*data.source, ArchitectureKind::CnnTradFpool3, cfg);
  c.expect(td4.mean_accuracy > c64.mean_accuracy && c64.mean_accuracy > trad.mean_accuracy,
           "4w1s ordering td-resnet7 > c64 > cnn-trad-fpool3 violated");
  c.notes.push_back("2w5s td " + fmt("%.2f", 100.0 * td2.mean_accuracy) + "; 4w1s td " +
                    fmt("%.2f", 100.0 * td4.mean_accuracy) + ", c64 " + fmt("%.2f", 100.0 * c64.mean_accuracy) +
                    ", cnn-trad " + fmt("%.2f", 100.0 * trad.mean_accuracy));
  return c.outcome();
}

// ------------------------------------------------------------ criteria 7, 8

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fskws");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data(), std::cerr, std::cerr);
}

struct DeskRun {
  fs::path dir;
  int code = -1;
};

DeskRun desk_end_to_end(const fs::path& source_tree, const fs::path& synth_config, const fs::path& dir) {
  DeskRun r{dir};
  const std::string m = (dir / "m").string();
  r.code = run_cli({"synth", "--input", source_tree.string(), "--out", m, "--seed", "7", "--config",
                    synth_config.string()});
  if (r.code != 0) return r;
  r.code = run_cli({"train", "--manifest", m + "/manifest.jsonl", "--arch", "td-resnet7", "--case", "a", "--n-way", "2",
                    "--k-shot", "1", "--seed", "7", "--profile", "desk", "--checkpoint", (dir / "ckpt.fskw").string()});
  if (r.code != 0) return r;
  r.code = run_cli({"eval", "--checkpoint", (dir / "ckpt.fskw").string(), "--manifest", m + "/manifest.jsonl", "--out",
                    (dir / "results.csv").string(), "--episodes-log", (dir / "episodes.jsonl").string()});
  return r;
}

Outcome determinism(const DeskRun& a, const DeskRun& b, double seconds) {
  Checks c;
  c.expect(a.code == 0 && b.code == 0, "pipeline exit codes " + std::to_string(a.code) + "/" + std::to_string(b.code));
  if (a.code == 0 && b.code == 0) {
    const auto ca = slurp(a.dir / "ckpt.fskw"), cb = slurp(b.dir / "ckpt.fskw");
    const auto ra = slurp(a.dir / "results.csv"), rb = slurp(b.dir / "results.csv");
    c.expect(!ca.empty() && ca == cb, "checkpoints differ");
    c.expect(!ra.empty() && ra == rb, "results CSVs differ");
    c.notes.push_back("checkpoint " + std::to_string(ca.size()) + " bytes");
  }
  c.notes.push_back("two desk runs in " + fmt("%.0f s", seconds));
  return c.outcome();
}

Outcome ci_formula(const DeskRun& run) {
  Checks c;
  if (run.code != 0) return {Status::Fail, "evaluation did not run"};
  std::ifstream log(run.dir / "episodes.jsonl");
  std::string line;
  std::getline(log, line);
  std::vector<double> acc;
  while (std::getline(log, line)) acc.push_back(nlohmann::json::parse(line).at("accuracy").get<double>());
  c.expect(acc.size() == 100, std::to_string(acc.size()) + " logged episodes");
  if (acc.empty()) return c.outcome();
  double mean = 0.0;
  for (double v : acc) mean += v;
  mean /= static_cast<double>(acc.size());
  double var = 0.0;
  for (double v : acc) var += (v - mean) * (v - mean);
  var /= static_cast<double>(acc.size());
  const double expected = 1.96 * std::sqrt(var) / std::sqrt(100.0);

  std::ifstream csv(run.dir / "results.csv");
  double reported = NAN;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("case,", 0) == 0) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
    if (cols.size() == 8) reported = std::stod(cols[5]);
  }
  c.expect(std::abs(reported - expected) <= 1e-9,
           "reported " + fmt("%.12f", reported) + " vs recomputed " + fmt("%.12f", expected));
  c.notes.push_back("ci95 " + fmt("%.6f", reported) + ", mean " + fmt("%.4f", mean));
  return c.outcome();
}

}  // namespace

int main() {
  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    std::fprintf(stderr, "running criterion %d (%s)\n", id, name.c_str());
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    results[id] = {name, o};
    const char* s = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "NOT RUN";
    std::printf("criterion %d [%s]: %s%s%s\n", id, name.c_str(), s, o.detail.empty() ? "" : " - ",
                o.detail.c_str());
    std::fflush(stdout);
  };

  record(1, "numeric core", numeric_core);
  record(2, "shape laws", shape_laws);
  record(3, "tone overfit", tone_overfit);

  const char* data_root = env("FSKWS_DATA_DIR");
  std::unique_ptr<DataRun> data;
  if (data_root != nullptr) {
    record(4, "dataset synthesis", [&] {
      const auto tmp = fixture::temp_dir("acceptance-c4");
      auto o = manifest_fidelity(data_root, tmp);
      fs::remove_all(tmp);
      return o;
    });
    try {
      data = std::make_unique<DataRun>(prepare_real_data(data_root));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "dataset preparation failed: %s\n", e.what());
    }
  } else {
    record(4, "dataset synthesis", [] { return Outcome{Status::NotRun, "dataset unavailable (set FSKWS_DATA_DIR)"}; });
  }
  if (env("FSKWS_SKIP_FIXTURE") == nullptr) {
    std::fprintf(stderr, "running criterion 4 on the synthetic fixture\n");
    const auto tmp = fixture::temp_dir("acceptance-fixture");
    Outcome o;
    try {
      const auto files = fixture::make_speech_commands(tmp / "sc", fixture::published_scale());
      o = manifest_fidelity(tmp / "sc", tmp / "out");
      o.detail = std::to_string(files) + " generated clips; " + o.detail;
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    fs::remove_all(tmp);
    const char* s = o.status == Status::Pass ? "PASS" : "FAIL";
    std::printf("criterion 4 [synthetic fixture at published scale, not the real dataset]: %s - %s\n", s,
                o.detail.c_str());
    std::fflush(stdout);
    if (o.status == Status::Fail) results[40] = {"synthetic fixture", o};
  }

  if (data) {
    record(5, "desk reproduction", [&] { return desk_reproduction(*data); });
  } else {
    record(5, "desk reproduction", [] { return Outcome{Status::NotRun, "dataset unavailable (set FSKWS_DATA_DIR)"}; });
  }
  if (data && env("FSKWS_FULL_REPRO") != nullptr) {
    record(6, "full reproduction", [&] { return full_reproduction(*data); });
  } else {
    record(6, "full reproduction", [&] {
      return Outcome{Status::NotRun, data ? "set FSKWS_FULL_REPRO=1 to run the full profile"
                                          : "dataset unavailable (set FSKWS_DATA_DIR and FSKWS_FULL_REPRO=1)"};
    });
  }

  const auto work = fixture::temp_dir("acceptance-desk");
  const auto tree = work / "sc";
  fixture::make_speech_commands(tree, fixture::small_scale(10, 30, 2, 20));
  const auto synth_cfg = work / "synth.json";
  std::ofstream(synth_cfg) << nlohmann::json{{"core_quota", 26},         {"unknown_quota", 20},
                                             {"core_speaker_threshold", 25}, {"core_split", {4, 2, 4}},
                                             {"silence_count", 20},       {"use_published_lists", false}}
                                  .dump();
  const auto t0 = Clock::now();
  std::fprintf(stderr, "desk run 1 of 2\n");
  const auto run_a = desk_end_to_end(tree, synth_cfg, work / "run-a");
  std::fprintf(stderr, "desk run 2 of 2\n");
  const auto run_b = desk_end_to_end(tree, synth_cfg, work / "run-b");
  const double desk_seconds = seconds_since(t0);
  record(7, "determinism (desk profile on a synthetic manifest)",
         [&] { return determinism(run_a, run_b, desk_seconds); });
  record(8, "ci95 formula", [&] { return ci_formula(run_a); });
  fs::remove_all(work);
  if (data) fs::remove_all(data->work);

  bool failed = false;
  for (const auto& [id, r] : results) failed = failed || r.second.status == Status::Fail;
  std::printf("acceptance: %s\n", failed ? "FAILED" : "OK");
  return failed ? 1 : 0;
}
