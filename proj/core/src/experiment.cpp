#include "tsdl/experiment.hpp"

#include "tsdl/optim.hpp"
#include "tsdl/tape.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

namespace tsdl {

Parameterization parse_parameterization(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '_', '-');
  if (n == "weight") return Parameterization::weight;
  if (n == "target-scu") return Parameterization::target_scu;
  if (n == "target-ocu") return Parameterization::target_ocu;
  throw std::invalid_argument("unknown parameterization '" + name +
                              "' (expected weight, target-scu or target-ocu)");
}

std::string to_string(Parameterization p) {
  switch (p) {
    case Parameterization::weight: return "weight";
    case Parameterization::target_scu: return "target-scu";
    case Parameterization::target_ocu: return "target-ocu";
  }
  return "?";
}

// ----- RunConfig -----

namespace {

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = strip(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + line + "'");
    const std::string key = strip(line.substr(0, eq));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    cfg.kv[key] = strip(line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

int RunConfig::get_int(const std::string& key, int fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not an integer: " + it->second);
  }
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not a number: " + it->second);
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not an integer: " + it->second);
  }
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

// ----- telemetry -----

std::string metrics_csv_header() { return "iteration,loss,train_acc,test_acc,seconds"; }

std::string to_csv_line(const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.3f", row.iteration, row.loss,
                row.train_acc, row.test_acc, row.seconds);
  return buf;
}

namespace {

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = strip(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw std::invalid_argument(what + ": not an integer list: " + s);
    }
  }
  if (out.empty()) throw std::invalid_argument(what + ": empty list");
  return out;
}

// "kh-oc-pool" triples separated by commas; input channels are chained.
std::vector<ConvLayerSpec> parse_conv_list(const std::string& s, int in_channels) {
  std::vector<ConvLayerSpec> out;
  std::istringstream in(s);
  std::string item;
  int c = in_channels;
  while (std::getline(in, item, ',')) {
    item = strip(item);
    if (item.empty()) continue;
    std::vector<int> f;
    std::istringstream fin(item);
    std::string part;
    while (std::getline(fin, part, '-')) f.push_back(std::stoi(strip(part)));
    if (f.size() != 3)
      throw std::invalid_argument("conv spec: expected k-channels-pool, got '" + item + "'");
    ConvLayerSpec l;
    l.kernel_h = l.kernel_w = f[0];
    l.in_channels = c;
    l.out_channels = f[1];
    l.pool_k = f[2];
    out.push_back(l);
    c = f[1];
  }
  return out;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Without-replacement minibatches, reshuffled each epoch; degenerates to the
// identity permutation for full-batch runs so they stay deterministic.
class BatchSampler {
 public:
  BatchSampler(int pool, int batch, std::uint64_t seed)
      : pool_(pool), batch_(std::min(batch, pool)), rng_(seed), order_(pool) {
    for (int i = 0; i < pool; ++i) order_[i] = i;
    pos_ = pool;  // force a shuffle on first use
  }

  std::vector<int> next() {
    if (batch_ == pool_) return order_;
    if (pos_ + batch_ > pool_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    std::vector<int> idx(order_.begin() + pos_, order_.begin() + pos_ + batch_);
    pos_ += batch_;
    return idx;
  }

 private:
  int pool_;
  int batch_;
  std::mt19937_64 rng_;
  std::vector<int> order_;
  int pos_;
};

Matrix gather_cols(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(m.rows(), int(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c)
    for (int r = 0; r < m.rows(); ++r) out(r, int(c)) = m(r, idx[c]);
  return out;
}

int record_cadence(int iters) { return iters <= 1000 ? 1 : 10; }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

OptimizerState make_optimizer(const RunConfig& cfg, double default_lr) {
  const std::string kind = cfg.get("opt", "adam");
  OptimizerState opt;
  if (kind == "sgd")
    opt.kind = OptimizerKind::sgd;
  else if (kind == "adam")
    opt.kind = OptimizerKind::adam;
  else
    throw std::invalid_argument("unknown optimizer '" + kind + "' (expected sgd or adam)");
  opt.lr = cfg.get_double("lr", default_lr);
  return opt;
}

// Creates the output directory, serializes the effective config, opens the
// metrics CSV with its header row.
struct RunIo {
  std::filesystem::path dir;
  std::ofstream csv;

  RunIo(const RunConfig& cfg, const std::string& default_dir) {
    dir = cfg.get("out", default_dir);
    std::filesystem::create_directories(dir);
    std::ofstream conf(dir / "config.txt");
    conf << cfg.serialize();
    csv.open(dir / "metrics.csv");
    csv << metrics_csv_header() << "\n";
  }

  void append(RunResult& res, const MetricsRow& row) {
    csv << to_csv_line(row) << "\n";
    csv.flush();
    res.history.push_back(row);
  }

  void fail(const std::string& message) {
    std::ofstream err(dir / "error.txt");
    err << message << "\n";
  }
};

void finish(RunResult& res) {
  if (res.history.empty()) return;
  const MetricsRow& last = res.history.back();
  res.final_loss = last.loss;
  res.final_train_acc = last.train_acc;
  res.final_test_acc = last.test_acc;
}

}  // namespace

// ----- two spirals -----

RunResult run_two_spirals(const RunConfig& cfg) {
  RunResult res;
  std::unique_ptr<RunIo> io;
  try {
    io = std::make_unique<RunIo>(cfg, "runs/twospirals");

    NetworkSpec spec;
    spec.layer_widths = parse_int_list(cfg.get("widths", "2,5,5,5,2"), "widths");
    spec.all_shortcuts = cfg.get_int("shortcuts", 1) != 0;
    spec.hidden_activation = Activation::tanh_fn;
    spec.output_head = OutputHead::softmax_xent;
    spec.validate();

    const Parameterization param = parse_parameterization(cfg.get("param", "target-scu"));
    const double lambda = cfg.get_double("lambda", 1e-3);
    const double sigma = cfg.get_double("sigma", 1.0);
    const int iters = cfg.get_int("iters", 4000);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    OptimizerState opt = make_optimizer(cfg, 0.01);

    const TwoSpirals data = gen_two_spirals();
    const int pool = data.train.inputs.cols();
    const int nb = std::min(cfg.get_int("batch", pool), pool);
    const int nbar = std::min(cfg.get_int("target_batch", nb), pool);

    // Spread the solve batch over both spirals when it is a strict subset.
    std::vector<int> xbar_idx(nbar);
    for (int i = 0; i < nbar; ++i) xbar_idx[i] = int(std::int64_t(i) * pool / nbar);
    const Matrix xbar = gather_cols(data.train.inputs, xbar_idx);

    std::vector<Matrix> params;
    TargetParams targets;
    if (param == Parameterization::weight) {
      params = init_weights(spec, seed).w;
    } else {
      targets = init_targets(spec, xbar, sigma, seed);
      targets = project_targets(spec, targets, lambda);
      params = targets.t;
    }

    auto current_weights = [&]() -> WeightParams {
      if (param == Parameterization::weight) return WeightParams{params};
      targets.t = params;
      if (param == Parameterization::target_scu)
        return targets_to_weights_scu(spec, targets, lambda).first;
      return targets_to_weights_ocu(spec, targets, lambda);
    };

    BatchSampler sampler(pool, nb, seed ^ 0x9e3779b97f4a7c15ull);
    const int cadence = record_cadence(iters);
    Stopwatch clock;

    for (int it = 1; it <= iters; ++it) {
      const std::vector<int> idx = sampler.next();
      const Matrix x = gather_cols(data.train.inputs, idx);
      const Matrix labels = gather_cols(data.train.labels, idx);

      std::vector<Matrix> grads;
      double batch_loss = 0.0;
      if (param == Parameterization::weight) {
        const WeightParams w{params};
        const ForwardTrace tr = forward(spec, w, x);
        batch_loss = loss_value(spec.output_head, tr.y, labels);
        grads = weight_gradient(spec, w, x, labels);
      } else if (param == Parameterization::target_scu) {
        targets.t = params;
        auto [w, solve_trace] = targets_to_weights_scu(spec, targets, lambda);
        const ForwardTrace tr = forward(spec, w, x);
        batch_loss = loss_value(spec.output_head, tr.y, labels);
        const std::vector<Matrix> dldw = weight_gradient(spec, w, x, labels);
        grads = target_gradient_manual(spec, targets, lambda, dldw, solve_trace);
      } else {
        targets.t = params;
        Tape tape;
        TapeMapping map = tape_targets_to_weights(tape, spec, targets, lambda, false);
        Var y = tape_forward(tape, spec, map.weights, x);
        Var loss = tape_loss(tape, spec.output_head, y, labels);
        batch_loss = loss.value()(0, 0);
        const auto adj = tape.backward(loss);
        grads.resize(params.size());
        for (int j = 2; j <= spec.num_layers(); ++j)
          grads[j] = grad_or_zero(adj, map.targets[j]);
      }
      optimizer_step(opt, params, grads);

      if (it % cadence == 0 || it == iters) {
        const WeightParams w = current_weights();
        MetricsRow row;
        row.iteration = it;
        row.loss = batch_loss;
        row.train_acc = accuracy(forward(spec, w, data.train.inputs).y, data.train.labels);
        row.test_acc = accuracy(forward(spec, w, data.test.inputs).y, data.test.labels);
        row.seconds = clock.seconds();
        io->append(res, row);
        if (res.success_iteration < 0 && row.train_acc >= 1.0) res.success_iteration = it;
      }
    }

    const WeightParams w = current_weights();
    write_pgm((io->dir / "decision_map.pgm").string(),
              decision_map(spec, w, cfg.get_int("map_resolution", 200)));
    write_accuracy_svg((io->dir / "accuracy.svg").string(), res.history);

    finish(res);
    if (res.history.empty()) {  // zero-iteration run: report the initial network
      const ForwardTrace tr = forward(spec, w, data.train.inputs);
      res.final_loss = loss_value(spec.output_head, tr.y, data.train.labels);
      res.final_train_acc = accuracy(tr.y, data.train.labels);
      res.final_test_acc = accuracy(forward(spec, w, data.test.inputs).y, data.test.labels);
    }
    res.ok = true;
    res.success = res.success_iteration >= 0;
  } catch (const std::exception& e) {
    res.error = e.what();
    if (io) io->fail(res.error);
  }
  return res;
}

// ----- bit-stream tasks -----

namespace {

double masked_bit_accuracy(const std::vector<Matrix>& ys, const std::vector<Matrix>& labels,
                           const std::vector<int>& mask) {
  long total = 0, correct = 0;
  for (std::size_t t = 0; t < ys.size(); ++t) {
    if (!mask[t]) continue;
    for (int c = 0; c < ys[t].cols(); ++c) {
      const int pred = ys[t](0, c) >= ys[t](1, c) ? 0 : 1;
      const int want = labels[t](0, c) >= labels[t](1, c) ? 0 : 1;
      ++total;
      if (pred == want) ++correct;
    }
  }
  return total == 0 ? 0.0 : double(correct) / double(total);
}

SequenceBatch gather_streams(const SequenceBatch& pool, const std::vector<int>& idx) {
  SequenceBatch out;
  out.mask = pool.mask;
  for (int t = 0; t < pool.steps(); ++t) {
    out.inputs.push_back(gather_cols(pool.inputs[t], idx));
    out.labels.push_back(gather_cols(pool.labels[t], idx));
  }
  return out;
}

}  // namespace

RunResult run_bitstream(const RunConfig& cfg) {
  RunResult res;
  std::unique_ptr<RunIo> io;
  try {
    const std::string experiment = cfg.get("experiment", "bitstream");
    const std::string task =
        cfg.get("task", experiment == "adder" ? "adder" : "memorize");
    if (task != "memorize" && task != "adder")
      throw std::invalid_argument("unknown bit-stream task '" + task + "'");
    io = std::make_unique<RunIo>(cfg, "runs/" + (task == "adder" ? std::string("adder")
                                                                 : std::string("bitstream")));

    const int delay = cfg.get_int("delay", task == "adder" ? 2 : 4);
    const int hidden = cfg.get_int("hidden", delay + (task == "adder" ? 5 : 3));
    const int len = cfg.get_int("stream_len", delay + 50);
    const int pool_size = cfg.get_int("streams", 2000);
    const int test_size = cfg.get_int("test_streams", 200);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const Parameterization param = parse_parameterization(cfg.get("param", "target-scu"));
    const double lambda = cfg.get_double("lambda", 0.1);
    const double sigma = cfg.get_double("sigma", 1.0);
    const int iters = cfg.get_int("iters", 20000);
    OptimizerState opt = make_optimizer(cfg, 0.001);

    auto gen = [&](int count, int length, std::uint64_t s) {
      return task == "adder" ? gen_delay_adder(delay, count, length, s)
                             : gen_delay_bitstream(delay, count, length, s);
    };
    const SequenceBatch pool = gen(pool_size, len, seed);
    const SequenceBatch test = gen(test_size, len, seed + 7777);
    const int nb = std::min(cfg.get_int("batch", 100), pool_size);
    const int nbar = cfg.get_int("target_batch", 100);
    const int nbar_t = cfg.get_int("target_steps", len);

    RnnSpec spec = RnnSpec::simple(1, hidden, 2);
    spec.validate();

    std::vector<Matrix> params;
    RnnTargetParams targets;
    if (param == Parameterization::weight) {
      params = rnn_init_weights(spec, seed).w;
    } else {
      targets = rnn_init_targets(spec, gen(nbar, nbar_t, seed + 3333).inputs, sigma, seed);
      targets = rnn_project_targets(spec, targets, lambda);
      params = targets.t;
    }

    auto current_weights = [&]() -> WeightParams {
      if (param == Parameterization::weight) return WeightParams{params};
      targets.t = params;
      if (param == Parameterization::target_scu)
        return rnn_targets_to_weights_scu(spec, targets, lambda);
      return rnn_targets_to_weights_ocu(spec, targets, lambda);
    };

    BatchSampler sampler(pool_size, nb, seed ^ 0x9e3779b97f4a7c15ull);
    const int cadence = record_cadence(iters);
    Stopwatch clock;

    for (int it = 1; it <= iters; ++it) {
      const SequenceBatch batch = gather_streams(pool, sampler.next());

      Tape tape;
      std::vector<Var> weight_vars(std::size_t(spec.num_layers()) + 1);
      RnnTapeMapping map;
      if (param == Parameterization::weight) {
        for (int j = 3; j <= spec.num_layers(); ++j) weight_vars[j] = tape.leaf(params[j]);
      } else {
        targets.t = params;
        map = tape_rnn_targets_to_weights(tape, spec, targets, lambda,
                                          param == Parameterization::target_scu);
        weight_vars = map.weights;
      }
      const std::vector<Var> ys = tape_rnn_forward(tape, spec, weight_vars, batch.inputs);
      const Var loss = tape_rnn_masked_loss(tape, spec.output_head, ys, batch.labels,
                                            batch.mask);
      const auto adj = tape.backward(loss);

      std::vector<Matrix> grads(params.size());
      for (int j = 3; j <= spec.num_layers(); ++j)
        grads[j] = grad_or_zero(adj, param == Parameterization::weight ? weight_vars[j]
                                                                       : map.targets[j]);
      optimizer_step(opt, params, grads);

      if (it % cadence == 0 || it == iters) {
        std::vector<Matrix> batch_y;
        for (const Var& y : ys) batch_y.push_back(y.value());
        const RnnTrace tr = rnn_forward(spec, current_weights(), test.inputs);
        MetricsRow row;
        row.iteration = it;
        row.loss = loss.value()(0, 0);
        row.train_acc = masked_bit_accuracy(batch_y, batch.labels, batch.mask);
        row.test_acc = masked_bit_accuracy(tr.y, test.labels, test.mask);
        row.seconds = clock.seconds();
        io->append(res, row);
        if (row.test_acc >= 0.99) {
          res.success_iteration = it;
          break;  // goal reached; later iterations would only cost time
        }
      }
    }

    finish(res);
    if (res.history.empty()) {
      const RnnTrace tr = rnn_forward(spec, current_weights(), test.inputs);
      res.final_test_acc = masked_bit_accuracy(tr.y, test.labels, test.mask);
      res.final_train_acc = res.final_test_acc;
    }
    res.ok = true;
    res.success = res.success_iteration >= 0;
  } catch (const std::exception& e) {
    res.error = e.what();
    if (io) io->fail(res.error);
  }
  return res;
}

// ----- reduced MNIST -----

namespace {

Tensor4 images_to_tensor(const Matrix& cols, int h, int w) {
  Tensor4 t;
  t.batch = cols.cols();
  t.h = h;
  t.w = w;
  t.channels = 1;
  t.m = Matrix(1, t.batch * h * w);
  for (int b = 0; b < t.batch; ++b)
    for (int p = 0; p < h * w; ++p) t.m(0, b * h * w + p) = cols(p, b);
  return t;
}

}  // namespace

RunResult run_mnist_small(const RunConfig& cfg) {
  RunResult res;
  std::unique_ptr<RunIo> io;
  try {
    io = std::make_unique<RunIo>(cfg, "runs/mnist");

    std::string dir = cfg.get("data_dir", "");
    if (dir.empty()) {
      const char* env = std::getenv("TSDL_DATA_DIR");
      dir = env ? env : "data/mnist";
    }
    LabeledBatch train, test;
    try {
      train = load_mnist_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
      test = load_mnist_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    } catch (const IdxError& e) {
      throw std::runtime_error(std::string(e.what()) +
                               "\nMNIST IDX files were expected under '" + dir +
                               "'. Fetch them with scripts/fetch_mnist.py or point "
                               "TSDL_DATA_DIR (or the data_dir key) at them.");
    }

    CnnSpec spec;
    spec.input_h = 28;
    spec.input_w = 28;
    spec.input_channels = 1;
    spec.conv = parse_conv_list(cfg.get("conv", "3-8-2,3-16-2"), 1);
    spec.dense = parse_int_list(cfg.get("dense", "32,10"), "dense");
    spec.output_head = OutputHead::softmax_xent;
    spec.validate();
    if (train.labels.rows() != spec.dense.back())
      throw std::invalid_argument("dense head width " + std::to_string(spec.dense.back()) +
                                  " does not match " + std::to_string(train.labels.rows()) +
                                  " classes");

    const Parameterization param = parse_parameterization(cfg.get("param", "target-scu"));
    const double lambda = cfg.get_double("lambda", 0.1);
    const double sigma = cfg.get_double("sigma", 0.1);
    const double dropout = cfg.get_double("dropout", 0.0);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const int pool = train.inputs.cols();
    const int nb = std::min(cfg.get_int("batch", 50), pool);
    const int nbar = std::min(cfg.get_int("target_batch", nb), pool);
    const int epochs = cfg.get_int("epochs", 3);
    const int iters = cfg.has("iters") ? cfg.get_int("iters", 0)
                                       : epochs * ((pool + nb - 1) / nb);
    OptimizerState opt = make_optimizer(cfg, 0.01);

    std::vector<int> xbar_idx(nbar);
    for (int i = 0; i < nbar; ++i) xbar_idx[i] = int(std::int64_t(i) * pool / nbar);
    const Tensor4 xbar = images_to_tensor(gather_cols(train.inputs, xbar_idx), 28, 28);

    const int n_conv = int(spec.conv.size());
    std::vector<Matrix> params;
    CnnTargetParams targets;
    auto pack = [&](const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
      params = a;
      params.insert(params.end(), b.begin(), b.end());
    };
    if (param == Parameterization::weight) {
      const CnnWeights w = cnn_init_weights(spec, seed);
      pack(w.conv_w, w.dense_w);
    } else {
      targets = cnn_init_targets(spec, xbar, sigma, seed);
      targets = cnn_project_targets(spec, targets, lambda);
      pack(targets.conv_t, targets.dense_t);
    }
    auto unpack = [&]() {
      if (param == Parameterization::weight) {
        CnnWeights w;
        w.conv_w.assign(params.begin(), params.begin() + n_conv);
        w.dense_w.assign(params.begin() + n_conv, params.end());
        return w;
      }
      targets.conv_t.assign(params.begin(), params.begin() + n_conv);
      targets.dense_t.assign(params.begin() + n_conv, params.end());
      if (param == Parameterization::target_scu)
        return cnn_targets_to_weights_scu(spec, targets, lambda).first;
      Tape tape;
      CnnTapeMapping map = tape_cnn_targets_to_weights(tape, spec, targets, lambda, false);
      CnnWeights w;
      for (const Var& v : map.conv_weights) w.conv_w.push_back(v.value());
      for (const Var& v : map.dense_weights) w.dense_w.push_back(v.value());
      return w;
    };

    auto test_accuracy = [&](const CnnWeights& w) {
      const int chunk = 200;
      long correct = 0;
      for (int b = 0; b < test.inputs.cols(); b += chunk) {
        std::vector<int> idx;
        for (int i = b; i < std::min(b + chunk, test.inputs.cols()); ++i) idx.push_back(i);
        const Matrix y = cnn_forward_logits(
            spec, w, images_to_tensor(gather_cols(test.inputs, idx), 28, 28));
        const Matrix lab = gather_cols(test.labels, idx);
        correct += std::lround(accuracy(y, lab) * double(idx.size()));
      }
      return double(correct) / double(test.inputs.cols());
    };

    const auto stage = spec.stage_dims();
    BatchSampler sampler(pool, nb, seed ^ 0x9e3779b97f4a7c15ull);
    std::mt19937_64 drop_seed(seed + 99);
    const int cadence = record_cadence(iters);
    Stopwatch clock;

    for (int it = 1; it <= iters; ++it) {
      const std::vector<int> idx = sampler.next();
      const Tensor4 x = images_to_tensor(gather_cols(train.inputs, idx), 28, 28);
      const Matrix labels = gather_cols(train.labels, idx);

      std::vector<Matrix> masks;
      if (dropout > 0.0) {
        std::vector<std::pair<int, int>> shapes;
        for (int i = 0; i < n_conv; ++i)
          shapes.emplace_back(stage[i].out_c, x.batch * stage[i].in_h * stage[i].in_w);
        masks = dropout_masks(shapes, dropout, drop_seed());
      }
      const std::vector<Matrix>* mask_ptr = masks.empty() ? nullptr : &masks;

      Tape tape;
      std::vector<Var> conv_w, dense_w;
      CnnTapeMapping map;
      if (param == Parameterization::weight) {
        for (int i = 0; i < n_conv; ++i) conv_w.push_back(tape.leaf(params[i]));
        for (std::size_t i = n_conv; i < params.size(); ++i)
          dense_w.push_back(tape.leaf(params[i]));
      } else {
        targets.conv_t.assign(params.begin(), params.begin() + n_conv);
        targets.dense_t.assign(params.begin() + n_conv, params.end());
        map = tape_cnn_targets_to_weights(tape, spec, targets, lambda,
                                          param == Parameterization::target_scu);
        conv_w = map.conv_weights;
        dense_w = map.dense_weights;
      }
      const Var y = tape_cnn_forward(tape, spec, conv_w, dense_w, x, mask_ptr);
      const Var loss = tape_loss(tape, spec.output_head, y, labels);
      const auto adj = tape.backward(loss);

      std::vector<Matrix> grads(params.size());
      for (int i = 0; i < n_conv; ++i)
        grads[i] = grad_or_zero(adj, param == Parameterization::weight ? conv_w[i]
                                                                       : map.conv_targets[i]);
      for (std::size_t i = n_conv; i < params.size(); ++i)
        grads[i] = grad_or_zero(adj, param == Parameterization::weight
                                         ? dense_w[i - n_conv]
                                         : map.dense_targets[i - n_conv]);
      optimizer_step(opt, params, grads);

      if (it % cadence == 0 || it == iters) {
        MetricsRow row;
        row.iteration = it;
        row.loss = loss.value()(0, 0);
        row.train_acc = accuracy(y.value(), labels);
        row.test_acc = test_accuracy(unpack());
        row.seconds = clock.seconds();
        io->append(res, row);
        if (res.success_iteration < 0 && row.test_acc >= 0.9) res.success_iteration = it;
      }
    }

    finish(res);
    if (res.history.empty()) res.final_test_acc = test_accuracy(unpack());
    res.ok = true;
    res.success = res.final_test_acc >= 0.9;
  } catch (const std::exception& e) {
    res.error = e.what();
    if (io) io->fail(res.error);
  }
  return res;
}

// ----- sweeps -----

std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::vector<std::uint64_t>& seeds) {
  std::string key;
  if (axis == "lambda")
    key = "lambda";
  else if (axis == "nbar_b")
    key = "target_batch";
  else if (axis == "N")
    key = "delay";
  else
    throw std::invalid_argument("unknown sweep axis '" + axis +
                                "' (expected lambda, nbar_b or N)");

  const std::string experiment = base.get("experiment", "twospirals");
  const std::filesystem::path out = base.get("out", "runs/sweep");
  std::filesystem::create_directories(out);

  std::vector<SweepRow> rows;
  for (const std::string& value : values) {
    SweepRow agg;
    agg.value = value;
    std::vector<double> success_iters, train_accs, test_accs;
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.set(key, value);
      cfg.set("seed", std::to_string(seed));
      cfg.set("out",
              (out / (axis + "=" + value) / ("seed" + std::to_string(seed))).string());
      RunResult r;
      if (experiment == "twospirals")
        r = run_two_spirals(cfg);
      else if (experiment == "bitstream" || experiment == "adder")
        r = run_bitstream(cfg);
      else if (experiment == "mnist")
        r = run_mnist_small(cfg);
      else
        throw std::invalid_argument("unknown experiment '" + experiment + "'");

      ++agg.seeds;
      if (!r.ok) {
        ++agg.failures;
        continue;
      }
      if (r.success) {
        ++agg.successes;
        success_iters.push_back(double(r.success_iteration));
      }
      train_accs.push_back(r.final_train_acc);
      test_accs.push_back(r.final_test_acc);
    }
    agg.median_success_iter = success_iters.empty() ? -1.0 : median(success_iters);
    agg.median_final_train_acc = median(train_accs);
    agg.median_final_test_acc = median(test_accs);
    rows.push_back(agg);
  }

  std::ofstream csv(out / "sweep.csv");
  csv << "axis,value,seeds,successes,failures,median_success_iter,"
         "median_final_train_acc,median_final_test_acc\n";
  for (const SweepRow& r : rows) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%d,%.10g,%.10g,%.10g", axis.c_str(),
                  r.value.c_str(), r.seeds, r.successes, r.failures, r.median_success_iter,
                  r.median_final_train_acc, r.median_final_test_acc);
    csv << buf << "\n";
  }
  return rows;
}

// ----- artifacts -----

Matrix decision_map(const NetworkSpec& spec, const WeightParams& w, int n) {
  if (n < 2) throw std::invalid_argument("decision_map: resolution must be >= 2");
  Matrix grid(2, n * n);
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * i / (n - 1);
    for (int j = 0; j < n; ++j) {
      grid(0, i * n + j) = -1.0 + 2.0 * j / (n - 1);
      grid(1, i * n + j) = y;
    }
  }
  const Matrix logits = forward(spec, w, grid).y;
  Matrix out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double d = logits(1, i * n + j) - logits(0, i * n + j);
      out(i, j) = 1.0 / (1.0 + std::exp(d));
    }
  return out;
}

void write_pgm(const std::string& path, const Matrix& gray01) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << gray01.cols() << " " << gray01.rows() << "\n255\n";
  for (int r = 0; r < gray01.rows(); ++r)
    for (int c = 0; c < gray01.cols(); ++c) {
      const double v = std::clamp(gray01(r, c), 0.0, 1.0);
      out.put(char(std::lround(v * 255.0)));
    }
}

void write_accuracy_svg(const std::string& path, const std::vector<MetricsRow>& rows) {
  const int width = 640, height = 400, ml = 50, mr = 15, mt = 15, mb = 35;
  const double pw = width - ml - mr, ph = height - mt - mb;
  const double max_it = rows.empty() ? 1.0 : std::max(1.0, double(rows.back().iteration));

  auto px = [&](double it) { return ml + pw * it / max_it; };
  auto py = [&](double acc) { return mt + ph * (1.0 - acc); };
  auto polyline = [&](auto value) {
    std::string pts;
    for (const MetricsRow& r : rows) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(r.iteration), py(value(r)));
      pts += buf;
    }
    return pts;
  };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "' viewBox='0 0 " << width << " " << height << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double acc = i / 4.0;
    out << "<line x1='" << ml << "' y1='" << py(acc) << "' x2='" << width - mr << "' y2='"
        << py(acc) << "' stroke='#ddd'/>\n"
        << "<text x='" << ml - 8 << "' y='" << py(acc) + 4
        << "' font-size='12' text-anchor='end'>" << acc << "</text>\n";
  }
  out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << height - mb
      << "' stroke='black'/>\n"
      << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr << "' y2='"
      << height - mb << "' stroke='black'/>\n"
      << "<text x='" << ml + pw / 2 << "' y='" << height - 8
      << "' font-size='12' text-anchor='middle'>iteration (max " << std::int64_t(max_it)
      << ")</text>\n";
  if (!rows.empty()) {
    out << "<polyline fill='none' stroke='#1f77b4' stroke-width='1.5' points='"
        << polyline([](const MetricsRow& r) { return r.train_acc; }) << "'/>\n"
        << "<polyline fill='none' stroke='#d62728' stroke-width='1.5' stroke-dasharray='5,3'"
        << " points='" << polyline([](const MetricsRow& r) { return r.test_acc; }) << "'/>\n";
  }
  out << "<text x='" << width - mr - 5 << "' y='" << mt + 14
      << "' font-size='12' text-anchor='end' fill='#1f77b4'>train</text>\n"
      << "<text x='" << width - mr - 5 << "' y='" << mt + 30
      << "' font-size='12' text-anchor='end' fill='#d62728'>test</text>\n"
      << "</svg>\n";
}

}  // namespace tsdl
