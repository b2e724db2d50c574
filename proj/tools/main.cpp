// Command-line front end: desk-scale experiment runners plus a self-check
// suite. Every training subcommand accepts a key=value config file; explicit
// flags override file values and the effective config is written next to the
// run's metrics so it can be replayed.

#include "tsdl/experiment.hpp"
#include "tsdl/verification.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <list>
#include <random>
#include <string>
#include <vector>

namespace {

// Flag values are kept as strings so the serialized config echoes exactly
// what the user typed. std::list keeps the bound addresses stable.
struct Flags {
  std::string config;
  std::list<std::pair<std::string, std::string>> bound;

  std::string* slot(const std::string& key) {
    bound.emplace_back(key, "");
    return &bound.back().second;
  }

  void attach_common(CLI::App* sub) {
    sub->add_option("--config", config, "key=value config file");
    sub->add_option("--param", *slot("param"),
                    "parameterization: weight, target-scu or target-ocu");
    sub->add_option("--opt", *slot("opt"), "optimizer: sgd or adam");
    sub->add_option("--lr", *slot("lr"), "learning rate");
    sub->add_option("--lambda", *slot("lambda"), "least-squares regularizer");
    sub->add_option("--batch", *slot("batch"), "training minibatch size");
    sub->add_option("--target-batch", *slot("target_batch"), "solve batch size");
    sub->add_option("--iters", *slot("iters"), "iteration budget");
    sub->add_option("--seed", *slot("seed"), "RNG seed");
    sub->add_option("--out", *slot("out"), "output directory");
  }

  tsdl::RunConfig build(const std::string& experiment) {
    tsdl::RunConfig cfg;
    if (!config.empty()) cfg = tsdl::RunConfig::from_file(config);
    cfg.set("experiment", experiment);
    for (auto& [key, value] : bound)
      if (!value.empty()) cfg.set(key, value);
    return cfg;
  }
};

int report(const tsdl::RunResult& res) {
  if (!res.ok) {
    std::fprintf(stderr, "run failed: %s\n", res.error.c_str());
    return 2;
  }
  std::printf("iterations recorded: %zu\n", res.history.size());
  std::printf("final: loss %.6g, train_acc %.4f, test_acc %.4f\n", res.final_loss,
              res.final_train_acc, res.final_test_acc);
  if (res.success_iteration >= 0)
    std::printf("goal reached at iteration %d\n", res.success_iteration);
  else
    std::printf("goal not reached within budget\n");
  return 0;
}

// Compact self-checks over the library's analytical claims; each line is one
// independent check. Returns the number of failures.
int run_verify() {
  int failures = 0;
  auto check = [&](bool ok, const std::string& name, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "ok" : "FAIL", name.c_str(), detail.c_str());
    if (!ok) ++failures;
  };
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto random_matrix = [&](int r, int c) {
    tsdl::Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };

  {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const int r = 1 + int(rng() % 8), c = 1 + int(rng() % 8);
      const tsdl::Matrix a = random_matrix(r, c);
      for (double lambda : {1e-3, 0.1}) {
        // The two algebraically equal forms, inverting the left and the right
        // Gramian; reg_pseudoinverse picks whichever Gramian is smaller.
        tsdl::Matrix left_gram = tsdl::matmul(a, tsdl::transpose(a));
        tsdl::Matrix right_gram = tsdl::matmul(tsdl::transpose(a), a);
        for (int i = 0; i < r; ++i) left_gram(i, i) += lambda;
        for (int i = 0; i < c; ++i) right_gram(i, i) += lambda;
        const tsdl::Matrix via_left = tsdl::transpose(tsdl::spd_solve(left_gram, a));
        const tsdl::Matrix via_right = tsdl::spd_solve(right_gram, tsdl::transpose(a));
        const tsdl::Matrix picked = tsdl::reg_pseudoinverse(a, lambda);
        const double d =
            std::max(tsdl::frobenius_norm(tsdl::sub(via_left, via_right)),
                     tsdl::frobenius_norm(tsdl::sub(picked, r < c ? via_left : via_right))) /
            (1.0 + tsdl::frobenius_norm(via_left));
        worst = std::max(worst, d);
      }
    }
    check(worst < 1e-9, "pseudoinverse branches", "max reconstruction gap " +
                                                      std::to_string(worst));
  }

  {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const int r = 1 + int(rng() % 6), c = 1 + int(rng() % 6);
      tsdl::Matrix a = random_matrix(r, c);
      if (trial % 3 == 0 && r > 1)  // duplicate a row: rank-deficient case
        for (int j = 0; j < c; ++j) a(r - 1, j) = a(0, j);
      for (double lambda : {1e-3, 0.1}) {
        const double res = tsdl::check_lemma_identity(a, lambda);
        worst = std::max(worst, res / (1.0 + tsdl::frobenius_norm(a)));
      }
    }
    check(worst < 1e-8, "pseudoinverse identity", "max scaled residual " +
                                                      std::to_string(worst));
  }

  {
    // Manual target gradient against the tape over a few random nets.
    double worst = 0.0;
    for (int trial = 0; trial < 6; ++trial) {
      tsdl::NetworkSpec spec;
      spec.layer_widths = {2, 3, 2};
      spec.all_shortcuts = trial % 2 == 1;
      spec.output_head = trial % 2 ? tsdl::OutputHead::mse_linear
                                   : tsdl::OutputHead::softmax_xent;
      const int nb = 4;
      const double lambda = 0.05;
      tsdl::Matrix labels(2, nb);
      for (int i = 0; i < nb; ++i) labels(int(rng() % 2), i) = 1.0;
      if (spec.output_head == tsdl::OutputHead::mse_linear) labels = random_matrix(2, nb);
      const tsdl::Matrix x = random_matrix(2, nb);
      tsdl::TargetParams t = tsdl::init_targets(spec, x, 1.0, rng());

      auto [w, solve_trace] = tsdl::targets_to_weights_scu(spec, t, lambda);
      const auto dldw = tsdl::weight_gradient(spec, w, x, labels);
      const auto manual = tsdl::target_gradient_manual(spec, t, lambda, dldw, solve_trace);

      tsdl::Tape tape;
      auto map = tsdl::tape_targets_to_weights(tape, spec, t, lambda, true);
      auto y = tsdl::tape_forward(tape, spec, map.weights, x);
      auto loss = tsdl::tape_loss(tape, spec.output_head, y, labels);
      const auto adj = tape.backward(loss);
      for (int j = 2; j <= spec.num_layers(); ++j) {
        const tsdl::Matrix g = tsdl::grad_or_zero(adj, map.targets[j]);
        const double scale = 1.0 + tsdl::max_abs(g);
        worst = std::max(worst, tsdl::max_abs(tsdl::sub(manual[j], g)) / scale);
      }
    }
    check(worst < 1e-8, "target gradient vs tape", "max relative gap " +
                                                       std::to_string(worst));
  }

  {
    // Weights -> captured targets -> weights again (full-rank round trip).
    tsdl::RnnSpec spec = tsdl::RnnSpec::simple(1, 5, 2);
    tsdl::WeightParams w = tsdl::rnn_init_weights(spec, 7);
    std::vector<tsdl::Matrix> xbar;
    for (int t = 0; t < 12; ++t) xbar.push_back(random_matrix(1, 9));
    const tsdl::RnnTrace tr = tsdl::rnn_forward(spec, w, xbar);
    tsdl::RnnTargetParams t;
    t.t.resize(std::size_t(spec.num_layers()) + 1);
    t.xbar_seq = xbar;
    for (int j = 3; j <= spec.num_layers(); ++j) {
      std::vector<const tsdl::Matrix*> blocks;
      for (const auto& s : tr.s[j]) blocks.push_back(&s);
      t.t[j] = tsdl::concat_cols(blocks);
    }
    const tsdl::WeightParams back = tsdl::rnn_targets_to_weights_scu(spec, t, 1e-10);
    double worst = 0.0;
    for (int j = 3; j <= spec.num_layers(); ++j)
      worst = std::max(worst, tsdl::max_abs(tsdl::sub(back.w[j], w.w[j])));
    check(worst < 1e-6, "recurrent round trip", "max weight gap " + std::to_string(worst));
  }

  {
    const auto e = tsdl::flop_estimate_ffnn_layer(2, 3, 5, 5);
    check(e.flops == 78, "flop estimate", "2-in 3-out solve batch 5 -> " +
                                              std::to_string(e.flops) + " flops");
  }

  return failures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"target-space neural network training experiments"};
  app.require_subcommand(1);

  Flags ts_flags, bs_flags, ad_flags, mn_flags, sw_flags;

  CLI::App* ts = app.add_subcommand("twospirals", "two-spirals classification benchmark");
  ts_flags.attach_common(ts);
  ts->add_option("--widths", *ts_flags.slot("widths"), "layer widths, e.g. 2,5,5,5,2");
  ts->add_option("--shortcuts", *ts_flags.slot("shortcuts"), "1 = all shortcut connections");
  ts->add_option("--sigma", *ts_flags.slot("sigma"), "target init standard deviation");

  CLI::App* bs = app.add_subcommand("bitstream", "delayed bit-recall recurrent task");
  bs_flags.attach_common(bs);
  bs->add_option("--delay", *bs_flags.slot("delay"), "recall delay N");
  bs->add_option("--hidden", *bs_flags.slot("hidden"), "recurrent layer width");
  bs->add_option("--streams", *bs_flags.slot("streams"), "training stream count");
  bs->add_option("--stream-len", *bs_flags.slot("stream_len"), "steps per stream");
  bs->add_option("--target-steps", *bs_flags.slot("target_steps"), "solve sequence length");
  bs->add_option("--sigma", *bs_flags.slot("sigma"), "target init standard deviation");

  CLI::App* ad = app.add_subcommand("adder", "delayed binary addition recurrent task");
  ad_flags.attach_common(ad);
  ad->add_option("--delay", *ad_flags.slot("delay"), "addend delay N");
  ad->add_option("--hidden", *ad_flags.slot("hidden"), "recurrent layer width");
  ad->add_option("--streams", *ad_flags.slot("streams"), "training stream count");
  ad->add_option("--stream-len", *ad_flags.slot("stream_len"), "steps per stream");
  ad->add_option("--target-steps", *ad_flags.slot("target_steps"), "solve sequence length");
  ad->add_option("--sigma", *ad_flags.slot("sigma"), "target init standard deviation");

  CLI::App* mn = app.add_subcommand("mnist", "reduced MNIST convolutional benchmark");
  mn_flags.attach_common(mn);
  mn->add_option("--epochs", *mn_flags.slot("epochs"), "epochs over the training subset");
  mn->add_option("--data-dir", *mn_flags.slot("data_dir"), "directory with the IDX files");
  mn->add_option("--conv", *mn_flags.slot("conv"), "conv stages, e.g. 3-8-2,3-16-2");
  mn->add_option("--dense", *mn_flags.slot("dense"), "dense widths, e.g. 32,10");
  mn->add_option("--dropout", *mn_flags.slot("dropout"), "conv activation dropout rate");
  mn->add_option("--sigma", *mn_flags.slot("sigma"), "target init standard deviation");

  CLI::App* sw = app.add_subcommand("sweep", "hyper-parameter sweep over seeds");
  sw_flags.attach_common(sw);
  std::string sw_experiment = "twospirals", sw_axis = "lambda";
  std::vector<std::string> sw_values;
  std::vector<std::uint64_t> sw_seeds;
  sw->add_option("--experiment", sw_experiment, "twospirals, bitstream, adder or mnist");
  sw->add_option("--axis", sw_axis, "lambda, nbar_b or N");
  sw->add_option("--values", sw_values, "axis values")->delimiter(',');
  sw->add_option("--seeds", sw_seeds, "seeds per value")->delimiter(',');

  CLI::App* vf = app.add_subcommand("verify", "run the library self-checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ts->parsed()) return report(tsdl::run_two_spirals(ts_flags.build("twospirals")));
    if (bs->parsed()) return report(tsdl::run_bitstream(bs_flags.build("bitstream")));
    if (ad->parsed()) return report(tsdl::run_bitstream(ad_flags.build("adder")));
    if (mn->parsed()) return report(tsdl::run_mnist_small(mn_flags.build("mnist")));
    if (vf->parsed()) {
      const int failures = run_verify();
      std::printf("%s\n", failures == 0 ? "all checks passed" : "CHECKS FAILED");
      return failures == 0 ? 0 : 1;
    }
    if (sw->parsed()) {
      if (sw_seeds.empty()) sw_seeds = {1, 2, 3};
      tsdl::RunConfig base = sw_flags.build(sw_experiment);
      base.set("experiment", sw_experiment);
      const auto rows = tsdl::run_sweep(base, sw_axis, sw_values, sw_seeds);
      std::printf("%-12s %6s %9s %9s %12s %10s %10s\n", sw_axis.c_str(), "seeds",
                  "successes", "failures", "med_iter", "med_train", "med_test");
      for (const auto& r : rows)
        std::printf("%-12s %6d %9d %9d %12.0f %10.4f %10.4f\n", r.value.c_str(), r.seeds,
                    r.successes, r.failures, r.median_success_iter,
                    r.median_final_train_acc, r.median_final_test_acc);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
