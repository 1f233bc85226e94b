// Copyright 2026 The privseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "harness.hpp"
#include "privseg/dp.hpp"
#include "privseg/serialize.hpp"

namespace privseg::harness {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) { return fmt::format("{:.17g}", v); }
std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

class CsvFile {
 public:
  CsvFile(const fs::path& path, std::string_view header) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out_ << header << '\n';
  }
  template <typename... Args>
  void row(fmt::format_string<Args...> f, Args&&... args) {
    out_ << fmt::format(f, std::forward<Args>(args)...) << '\n';
  }
  ~CsvFile() { out_.flush(); }

 private:
  fs::path path_;
  std::ofstream out_;
};

struct Stats {
  double mean = 0.0, stddev = 0.0;
};

// Population standard deviation.
Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

std::vector<int> patient_ids(const std::vector<PhantomSample>& samples) {
  std::vector<int> ids;
  for (const auto& s : samples) ids.push_back(s.patient_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

SplitDataset load_data(const ExperimentConfig& c) {
  if (!c.data_path.empty()) {
    if (!fs::exists(c.data_path / "manifest.csv")) {
      throw UsageError(fmt::format("no dataset at {} (manifest.csv missing)", c.data_path.string()));
    }
    return read_dataset(c.data_path);
  }
  const auto samples = generate_dataset(c.dataset);
  return apply_split(samples, split_dataset(patient_ids(samples), kDefaultSplit, c.split_seed));
}

Model make_model(const ExperimentConfig& c, const SplitDataset& d) {
  Model m = build_model(c.model, c.model_seed);
  const auto& any = !d.train.empty() ? d.train.front() : d.test.front();
  const Index div = c.model.input_divisor();
  if (any.image.dim(1) % div != 0 || any.image.dim(2) % div != 0) {
    throw UsageError(fmt::format("images are {}x{} but the model needs multiples of {}",
                                 any.image.dim(1), any.image.dim(2), div));
  }
  return m;
}

void write_seeds(const fs::path& path, const ExperimentConfig& c) {
  CsvFile f(path, "component,seed");
  f.row("model,{}", c.model_seed);
  f.row("data,{}", c.dataset.seed);
  f.row("split,{}", c.split_seed);
  f.row("train,{}", c.train.seed);
  f.row("partition,{}", c.partition_seed);
}

int rounds_for(const ExperimentConfig& c, const std::vector<std::vector<PhantomSample>>& shards) {
  if (c.rounds > 0) return c.rounds;
  size_t largest = 0;
  for (const auto& s : shards) largest = std::max(largest, s.size());
  const size_t b = c.train.batch_size == 0 ? largest
                                           : std::min(largest, static_cast<size_t>(c.train.batch_size));
  const long steps = static_cast<long>(c.epochs) * static_cast<long>((largest + b - 1) / b);
  return static_cast<int>((steps + c.sync_every - 1) / c.sync_every);
}

Tensor as_image(const Tensor& t) {
  return Tensor({1, 1, t.dim(t.rank() - 2), t.dim(t.rank() - 1)}, t.values());
}

}  // namespace

// ---------------------------------------------------------------------------

GenerateOutcome run_generate(const ExperimentConfig& c, const fs::path& out_dir, bool preview) {
  GenerateOutcome out;
  const auto samples = generate_dataset(c.dataset);
  for (const auto& s : samples) {
    const Eigen::VectorXd& img = s.image.values();
    const Eigen::VectorXd& m = s.mask.values();
    const double fg = m.sum();
    const double frac = fg / static_cast<double>(m.size());
    const double organ = img.dot(m) / std::max(fg, 1.0);
    const double bg = (img.sum() - img.dot(m)) / std::max(static_cast<double>(m.size()) - fg, 1.0);
    if (!img.allFinite() || img.minCoeff() < 0.0 || img.maxCoeff() > 1.0 || frac < 0.02 ||
        frac > 0.6 || organ - bg < 0.2) {
      out.invariant_failures.push_back(fmt::format(
          "patient {} slice {}: foreground {:.3f}, contrast {:.3f}", s.patient_id, s.slice, frac,
          organ - bg));
    }
  }
  out.split = split_dataset(patient_ids(samples), kDefaultSplit, c.split_seed);
  write_dataset(out_dir, samples, out.split, preview);
  ExperimentConfig copy = c;
  copy.data_path.clear();
  save_config(out_dir / "config.ini", copy);
  return out;
}

// ---------------------------------------------------------------------------

TrainOutcome run_train(const ExperimentConfig& c, const fs::path& out_dir, int threads,
                       bool quiet) {
  fs::create_directories(out_dir);
  save_config(out_dir / "config.ini", c);
  write_seeds(out_dir / "seeds.csv", c);
  const SplitDataset data = load_data(c);
  if (data.train.empty() || data.test.empty()) throw UsageError("dataset has an empty split");
  const Model model = make_model(c, data);
  TrainOutcome out;

  if (c.mode == Mode::kLocal) {
    auto t0 = Clock::now();
    const LocalResult r = train_local(model, data.train, data.val, c.train, c.epochs,
                                      [&](const EpochMetrics& m) {
                                        out.period_seconds.push_back(seconds_since(t0));
                                        t0 = Clock::now();
                                        if (!quiet) {
                                          fmt::print(stderr, "epoch {} loss {:.4f} dice_val {:.4f}{}\n",
                                                     m.epoch, m.train_loss, m.dice_val,
                                                     m.epsilon ? fmt::format(" eps {:.3f}", *m.epsilon) : "");
                                        }
                                      });
    CsvFile report(out_dir / "report.csv", "epoch,steps,train_loss,dice_val,epsilon");
    for (const EpochMetrics& m : r.epochs) {
      report.row("{},{},{},{},{}", m.epoch, m.steps, num(m.train_loss), num(m.dice_val),
                 opt_num(m.epsilon));
    }
    CsvFile eps(out_dir / "epsilon.csv", "site,step,epsilon");
    for (size_t i = 0; i < r.epsilon_by_step.size(); ++i) {
      eps.row("0,{},{}", i + 1, num(r.epsilon_by_step[i]));
    }
    out.params = r.params;
    out.stop = r.stop;
    out.epsilon_trajectory = r.epsilon_by_step;
    if (!r.epsilon_by_step.empty()) out.epsilon = r.epsilon_by_step.back();
    CsvFile timing(out_dir / "timing.csv", "epoch,seconds");
    for (size_t i = 0; i < out.period_seconds.size(); ++i) {
      timing.row("{},{}", i + 1, num(out.period_seconds[i]));
    }
  } else {
    const auto partition = partition_by_patient(patient_ids(data.train), c.n_workers,
                                                c.partition_seed);
    const auto shards = shard_samples(data.train, partition);
    FederationConfig fc;
    fc.n_workers = c.n_workers;
    fc.sync_every = c.sync_every;
    fc.rounds = rounds_for(c, shards);
    fc.weighted_aggregation = c.weighted;
    fc.train = c.train;
    fc.partition_seed = c.partition_seed;
    fc.threads = threads;
    fc.record_updates = c.capture_round >= 0;
    if (c.round_checkpoints) fs::create_directories(out_dir / "checkpoints");
    auto t0 = Clock::now();
    const FederationResult r = run_federation(
        model, shards, data.val, fc, [&](int round, const ParamSet& global) {
          out.period_seconds.push_back(seconds_since(t0));
          if (c.round_checkpoints) {
            save_param_set(out_dir / "checkpoints" / fmt::format("round_{:04d}.params", round),
                           global);
          }
          if (!quiet) fmt::print(stderr, "round {} done\n", round);
          t0 = Clock::now();
        });

    write_round_metrics(out_dir / "rounds.csv", r.rounds);
    std::map<int, std::vector<const RoundMetrics*>> by_round;
    for (const RoundMetrics& m : r.rounds) by_round[m.round].push_back(&m);
    CsvFile report(out_dir / "report.csv", "round,steps,train_loss,dice_val,epsilon");
    for (const auto& [round, rows] : by_round) {
      double loss = 0.0;
      std::optional<double> eps;
      for (const RoundMetrics* m : rows) {
        loss += m->loss;
        if (m->epsilon) eps = std::max(eps.value_or(0.0), *m->epsilon);
      }
      report.row("{},{},{},{},{}", round + 1, static_cast<long>(round + 1) * c.sync_every,
                 num(loss / static_cast<double>(rows.size())), num(rows.front()->dice_val),
                 opt_num(eps));
    }
    CsvFile eps(out_dir / "epsilon.csv", "site,step,epsilon");
    for (size_t w = 0; w < r.epsilon_by_site.size(); ++w) {
      for (size_t i = 0; i < r.epsilon_by_site[w].size(); ++i) {
        eps.row("{},{},{}", w, (i + 1) * static_cast<size_t>(c.sync_every),
                num(r.epsilon_by_site[w][i]));
      }
      if (!r.epsilon_by_site[w].empty()) {
        out.epsilon = std::max(out.epsilon.value_or(0.0), r.epsilon_by_site[w].back());
      }
    }
    if (!r.epsilon_by_site.empty()) out.epsilon_trajectory = r.epsilon_by_site.front();
    out.params = r.params;
    out.stop = r.stop;
    CsvFile timing(out_dir / "timing.csv", "round,seconds");
    for (size_t i = 0; i < out.period_seconds.size(); ++i) {
      timing.row("{},{}", i + 1, num(out.period_seconds[i]));
    }

    if (c.capture_round >= 0) {
      if (c.capture_round >= r.rounds_completed) {
        throw UsageError(fmt::format("capture round {} was not completed ({} rounds ran)",
                                     c.capture_round, r.rounds_completed));
      }
      const GradientUpdate g = capture_update(r, c.capture_round, c.capture_worker);
      save_capture(out_dir / "capture.cap", g);
      // Replays the victim's batch; with batch_size 1 it is a single image.
      Worker replay(c.capture_worker, shards[static_cast<size_t>(c.capture_worker)], c.train,
                    /*federated=*/true);
      const Batch b = replay.batch_for(c.capture_round);
      save_pten(out_dir / "capture_image.pten", b.images);
      save_pten(out_dir / "capture_mask.pten", b.masks);
      save_pgm(out_dir / "capture_image.pgm", b.images);
      save_pgm(out_dir / "capture_mask.pgm", b.masks);
    }
  }

  save_param_set(out_dir / "final.params", out.params);
  out.test_dice = dice_per_image(model, out.params, data.test);
  const Stats st = stats(out.test_dice);
  out.test_dice_mean = st.mean;
  {
    CsvFile f(out_dir / "dice_per_image.csv", "index,patient_id,slice,dice");
    for (size_t i = 0; i < out.test_dice.size(); ++i) {
      f.row("{},{},{},{}", i, data.test[i].patient_id, data.test[i].slice, num(out.test_dice[i]));
    }
  }
  {
    CsvFile f(out_dir / "summary.csv",
              "name,mode,family,backbone,regime,stop,test_dice_mean,test_dice_std,epsilon");
    f.row("{},{},{},{},{},{},{},{},{}", c.name, to_string(c.mode), to_string(c.model.family),
          to_string(c.model.backbone), c.regime, to_string(out.stop), num(st.mean),
          num(st.stddev), opt_num(out.epsilon));
  }
  if (!quiet) {
    fmt::print(stderr, "{}: test dice {:.4f} +- {:.4f} ({})\n", c.name, st.mean, st.stddev,
               to_string(out.stop));
  }
  return out;
}

// ---------------------------------------------------------------------------

AttackArgs load_attack_args(const fs::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(fmt::format("cannot read attack args: {}", e.message()));
  }
  AttackArgs a;
  const pt::ptree& s = tree.get_child("attack", pt::ptree());
  a.capture = s.get<std::string>("capture", "");
  a.mask = s.get<std::string>("mask", "");
  a.model = s.get<std::string>("model", "");
  a.config = s.get<std::string>("config", "");
  a.original = s.get<std::string>("original", "");
  a.iters = s.get("iters", a.iters);
  a.lr = s.get("lr", a.lr);
  a.optimizer = s.get("optimizer", a.optimizer);
  a.seed = s.get("seed", a.seed);
  a.patience = s.get("patience", a.patience);
  a.factor = s.get("factor", a.factor);
  a.baselines = s.get("baselines", a.baselines);
  a.random_mask = s.get("random_mask", a.random_mask);
  return a;
}

void save_attack_args(const fs::path& path, const AttackArgs& a) {
  std::ofstream out(path, std::ios::binary);
  out << "[attack]\n"
      << "capture = " << fs::absolute(a.capture).string() << '\n'
      << "mask = " << fs::absolute(a.mask).string() << '\n';
  if (!a.model.empty()) out << "model = " << fs::absolute(a.model).string() << '\n';
  if (!a.config.empty()) out << "config = " << fs::absolute(a.config).string() << '\n';
  if (!a.original.empty()) out << "original = " << fs::absolute(a.original).string() << '\n';
  out << fmt::format("iters = {}\nlr = {}\noptimizer = {}\nseed = {}\npatience = {}\n"
                     "factor = {}\nbaselines = {}\nrandom_mask = {}\n",
                     a.iters, a.lr, a.optimizer, a.seed, a.patience, a.factor, a.baselines,
                     a.random_mask ? "true" : "false");
}

AttackOutcome run_attack(const AttackArgs& a, const fs::path& out_dir, bool quiet) {
  for (const fs::path& p : {a.capture, a.mask}) {
    if (p.empty() || !fs::exists(p)) {
      throw UsageError(fmt::format("input file not found: {}", p.empty() ? "(none)" : p.string()));
    }
  }
  const fs::path dir = a.capture.parent_path();
  const fs::path config_path = a.config.empty() ? dir / "config.ini" : a.config;
  if (!fs::exists(config_path)) {
    throw UsageError(fmt::format("model config not found: {}", config_path.string()));
  }
  const ExperimentConfig cfg = load_config(config_path);
  const Model model = build_model(cfg.model, cfg.model_seed);
  const GradientUpdate capture = load_capture(a.capture);
  ParamSet params = capture.global_params;
  if (!a.model.empty()) {
    if (!fs::exists(a.model)) throw UsageError(fmt::format("model file not found: {}", a.model.string()));
    params = load_param_set(a.model);
  }
  if (!params.same_layout(model.initial_params())) {
    throw UsageError("captured parameters do not match the configured model");
  }
  Tensor mask = as_image(load_pten(a.mask));
  if (a.random_mask) {
    RandomStream rng(a.seed, hash_name("random-mask"));
    Eigen::VectorXd v(mask.numel());
    for (auto& x : v) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
    mask = Tensor(mask.shape(), v);
  }

  AttackConfig ac;
  ac.max_iters = a.iters;
  ac.lr = a.lr;
  ac.init_seed = a.seed;
  ac.divergence_patience = a.patience;
  ac.divergence_factor = a.factor;
  try {
    ac.optimizer = parse_attack_optimizer(a.optimizer);
    ac.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  fs::create_directories(out_dir);
  AttackArgs recorded = a;
  recorded.config = config_path;
  const fs::path original_path =
      !a.original.empty() ? a.original
                          : (fs::exists(dir / "capture_image.pten") ? dir / "capture_image.pten"
                                                                    : fs::path());
  recorded.original = original_path;
  save_attack_args(out_dir / "attack.ini", recorded);

  AttackOutcome out;
  out.result = invert(model, params, capture.gradient, mask, ac);
  const Tensor& rec = out.result.reconstruction;
  save_pten(out_dir / "reconstruction.pten", rec);
  save_pgm(out_dir / "reconstruction.pgm", rec);
  {
    CsvFile f(out_dir / "attack_metrics.csv", "iter,loss");
    for (size_t i = 0; i < out.result.loss_curve.size(); ++i) {
      f.row("{},{}", i, num(out.result.loss_curve[i]));
    }
  }
  if (!original_path.empty()) {
    const Tensor original = as_image(load_pten(original_path));
    out.quality = evaluate_reconstruction(rec, original);
    out.baseline_psnr = best_random_baseline_psnr(original, a.baselines, a.seed);
    // Triptych: original | reconstruction | |difference|.
    const Index h = rec.dim(2), w = rec.dim(3);
    Eigen::VectorXd tri(h * 3 * w);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const double o = original.values()[y * w + x], r = rec.values()[y * w + x];
        tri[y * 3 * w + x] = o;
        tri[y * 3 * w + w + x] = r;
        tri[y * 3 * w + 2 * w + x] = std::abs(o - r);
      }
    }
    save_pgm(out_dir / "triptych.pgm", Tensor({h, 3 * w}, tri));
  }
  CsvFile f(out_dir / "attack_summary.csv",
            "stop,iterations,best_iter,best_loss,mse,psnr,baseline_psnr");
  f.row("{},{},{},{},{},{},{}", to_string(out.result.stop), out.result.loss_curve.size(),
        out.result.best_iter, num(out.result.best_loss),
        out.quality ? num(out.quality->mse) : "", out.quality ? num(out.quality->psnr) : "",
        opt_num(out.baseline_psnr));
  if (!quiet) {
    fmt::print(stderr, "attack: {} after {} iterations, best loss {:.6f}{}\n",
               to_string(out.result.stop), out.result.loss_curve.size(), out.result.best_loss,
               out.quality ? fmt::format(", PSNR {:.2f} dB (baseline {:.2f} dB)",
                                         out.quality->psnr, *out.baseline_psnr)
                           : "");
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<BenchRow> run_bench(const ExperimentConfig& base, int warmup, int measured,
                                int threads, const fs::path& out_csv, bool quiet) {
  if (warmup < 0 || measured < 3) throw UsageError("bench needs >= 3 measured epochs");
  const SplitDataset data = load_data(base);
  std::vector<BenchRow> rows;
  for (BackboneStyle style : kAllBackbones) {
    ExperimentConfig c = base;
    c.model.family = ModelFamily::kUNet;
    c.model.backbone = style;
    const Model model = make_model(c, data);
    for (Mode mode : {Mode::kLocal, Mode::kFederated}) {
      BenchRow row;
      row.backbone = style;
      row.mode = mode;
      std::vector<double> all;
      if (mode == Mode::kLocal) {
        auto t0 = Clock::now();
        train_local(model, data.train, data.val, c.train, warmup + measured,
                    [&](const EpochMetrics&) {
                      all.push_back(seconds_since(t0));
                      t0 = Clock::now();
                    });
      } else {
        const auto shards = shard_samples(
            data.train, partition_by_patient(patient_ids(data.train), c.n_workers, c.partition_seed));
        c.epochs = 1;
        c.rounds = 0;
        const int per_epoch = rounds_for(c, shards);
        FederationConfig fc;
        fc.n_workers = c.n_workers;
        fc.sync_every = c.sync_every;
        fc.rounds = per_epoch * (warmup + measured);
        fc.weighted_aggregation = c.weighted;
        fc.train = c.train;
        fc.threads = threads;
        auto t0 = Clock::now();
        run_federation(model, shards, data.val, fc, [&](int round, const ParamSet&) {
          if ((round + 1) % per_epoch == 0) {
            all.push_back(seconds_since(t0));
            t0 = Clock::now();
          }
        });
      }
      // Budget aborts can cut the run short; keep what was measured.
      if (static_cast<int>(all.size()) > warmup) {
        row.seconds.assign(all.begin() + warmup, all.end());
      }
      const Stats s = stats(row.seconds);
      row.mean = s.mean;
      row.stddev = s.stddev;
      if (!quiet) {
        fmt::print(stderr, "{} {}: {:.3f} +- {:.3f} s/epoch\n", to_string(style), to_string(mode),
                   row.mean, row.stddev);
      }
      rows.push_back(row);
    }
  }
  CsvFile f(out_csv, "backbone,mode,epochs,mean_seconds,std_seconds");
  for (const BenchRow& r : rows) {
    f.row("{},{},{},{},{}", to_string(r.backbone), to_string(r.mode), r.seconds.size(),
          num(r.mean), num(r.stddev));
  }
  return rows;
}

// ---------------------------------------------------------------------------

std::string account_csv(double sigma, double q, long steps, double delta, bool header) {
  if (!(sigma > 0.0) || !(q > 0.0 && q <= 1.0) || steps < 0 || !(delta > 0.0 && delta < 1.0)) {
    throw UsageError(fmt::format("need sigma > 0, 0 < q <= 1, steps >= 0, 0 < delta < 1 "
                                 "(got {}, {}, {}, {})", sigma, q, steps, delta));
  }
  const EpsilonResult e = Accountant(q, sigma).epsilon_after(steps, delta);
  std::string s = header ? "sigma,q,steps,delta,epsilon,order\n" : "";
  s += fmt::format("{},{},{},{},{},{}\n", sigma, q, steps, delta, num(e.epsilon), e.order);
  return s;
}

void run_report(const std::vector<fs::path>& run_dirs, const fs::path& out_csv) {
  if (run_dirs.empty()) throw UsageError("report needs at least one run directory");
  std::string header;
  std::vector<std::string> lines;
  for (const fs::path& dir : run_dirs) {
    std::ifstream in(dir / "summary.csv");
    if (!in) throw UsageError(fmt::format("no summary.csv in {}", dir.string()));
    std::string h, row;
    std::getline(in, h);
    std::getline(in, row);
    if (header.empty()) header = h;
    if (h != header) throw UsageError(fmt::format("{} has a different summary layout", dir.string()));
    std::vector<double> secs;
    std::ifstream timing(dir / "timing.csv");
    std::string line;
    std::getline(timing, line);
    while (std::getline(timing, line)) {
      const auto comma = line.find(',');
      if (comma != std::string::npos) secs.push_back(std::stod(line.substr(comma + 1)));
    }
    lines.push_back(fmt::format("{},{},{}", dir.filename().string(), row,
                                secs.empty() ? "" : num(stats(secs).mean)));
  }
  CsvFile f(out_csv, "run_dir," + header + ",mean_period_seconds");
  for (const auto& l : lines) f.row("{}", l);
}

}  // namespace privseg::harness
