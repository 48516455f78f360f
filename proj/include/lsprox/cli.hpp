#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "lsprox/bgsub.hpp"
#include "lsprox/checkpoint.hpp"
#include "lsprox/config.hpp"
#include "lsprox/image.hpp"
#include "lsprox/rpca.hpp"
#include "lsprox/sequence.hpp"
#include "lsprox/synth.hpp"
#include "lsprox/train.hpp"
#include "lsprox/unet.hpp"

namespace lsprox::cli {

namespace detail {

inline std::string zpad(int v, int width = 4) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void ensure_dir(const std::filesystem::path& p) {
  std::filesystem::create_directories(p);
}

// Affine rescale of [min, max] to [0, 255]; the scale goes to a sidecar file.
inline void write_rescaled_pgm(const std::filesystem::path& path,
                               const std::vector<double>& v, int h, int w) {
  double lo = v.empty() ? 0.0 : v[0], hi = lo;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<std::uint8_t> px(v.size(), 0);
  if (hi > lo) {
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < v.size(); ++i)
      px[i] = static_cast<std::uint8_t>(std::lround((v[i] - lo) * scale));
  }
  img::write_pgm(path.string(), px, h, w);
  std::ofstream side(path.string() + ".scale.txt", std::ios::trunc);
  side << "min\t" << g17(lo) << "\nmax\t" << g17(hi) << "\n";
  if (!side) throw std::runtime_error("cannot write sidecar for '" + path.string() + "'");
}

inline void write_mask_pgm(const std::filesystem::path& path,
                           const std::vector<std::uint8_t>& mask, int h, int w) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask[i] ? 255 : 0;
  img::write_pgm(path.string(), px, h, w);
}

inline std::vector<double> column_of(const Matrix& m, int j) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, j);
  return v;
}

struct DataSelection {
  std::string dir;
  int start = 0;
  int count = -1;
  int sample = 0;
  std::uint64_t seed = 0;
};

inline DataSelection read_data_keys(Config& cfg) {
  DataSelection sel;
  sel.dir = cfg.require_string("data.dir");
  sel.start = cfg.get_int("data.start", 0);
  sel.count = cfg.get_int("data.count", -1);
  sel.sample = cfg.get_int("data.sample", 0);
  sel.seed = cfg.get_uint64("data.seed", 0);
  return sel;
}

inline bgsub::Sequence load_selected(const DataSelection& sel) {
  return bgsub::load_sequence(sel.dir, sel.start, sel.count, sel.sample, sel.seed);
}

inline void write_detection(const std::filesystem::path& out,
                            const bgsub::DetectResult& det,
                            const std::vector<int>& frame_ids, int h, int w) {
  ensure_dir(out / "masks");
  for (std::size_t j = 0; j < det.masks.size(); ++j)
    write_mask_pgm(out / "masks" / ("mask_" + zpad(frame_ids[j]) + ".pgm"), det.masks[j], h, w);
}

// ---- subcommands ---------------------------------------------------------

inline void run_synth(Config& cfg, const std::filesystem::path& out) {
  bgsub::SynthConfig sc;
  sc.height = cfg.get_int("synth.height", sc.height);
  sc.width = cfg.get_int("synth.width", sc.width);
  sc.n_frames = cfg.get_int("synth.frames", sc.n_frames);
  sc.background_rank = cfg.get_int("synth.rank", sc.background_rank);
  sc.drift = cfg.get_double("synth.drift", sc.drift);
  sc.objects = cfg.get_int("synth.objects", sc.objects);
  sc.object_size = cfg.get_int("synth.object_size", sc.object_size);
  sc.object_speed = cfg.get_double("synth.object_speed", sc.object_speed);
  sc.static_objects = cfg.get_int("synth.static_objects", sc.static_objects);
  sc.noise = cfg.get_double("synth.noise", sc.noise);
  sc.seed = cfg.get_uint64("synth.seed", sc.seed);
  cfg.require_fully_consumed();

  bgsub::SynthSequence synth = bgsub::synth_sequence(sc);
  ensure_dir(out / "frames");
  ensure_dir(out / "truth");
  for (int t = 0; t < synth.seq.n(); ++t) {
    img::write_pgm((out / "frames" / ("frame_" + zpad(t) + ".pgm")).string(),
                   img::quantize_unit(synth.seq.frames[static_cast<std::size_t>(t)]), sc.height,
                   sc.width);
    write_mask_pgm(out / "truth" / ("mask_" + zpad(t) + ".pgm"),
                   synth.seq.masks[static_cast<std::size_t>(t)], sc.height, sc.width);
  }
}

inline void run_rpca(Config& cfg, const std::filesystem::path& out) {
  DataSelection sel = read_data_keys(cfg);
  rpca::RpcaConfig rc;
  rc.lambda_star = cfg.get_double("rpca.lambda_star", rc.lambda_star);
  rc.lambda_1 = cfg.get_double("rpca.lambda_1", rc.lambda_1);
  rc.alpha = cfg.get_double("rpca.alpha", rc.alpha);
  rc.max_iter = cfg.get_int("rpca.max_iter", rc.max_iter);
  rc.tol = cfg.get_double("rpca.tol", rc.tol);
  const int target_frame = cfg.get_int("rpca.frame", -1);
  const int window = cfg.get_int("rpca.window", 50);
  cfg.require_fully_consumed();

  if (target_frame >= 0) {
    // Window of `window` frames centered on the target, clamped at the ends.
    if (sel.start != 0 || sel.count != -1 || sel.sample != 0)
      throw std::runtime_error(
          "rpca: rpca.frame cannot be combined with data.start/data.count/data.sample");
    const int total = bgsub::count_sequence_files(sel.dir);
    if (target_frame >= total)
      throw std::runtime_error("rpca: rpca.frame " + std::to_string(target_frame) +
                               " out of range (have " + std::to_string(total) + " frames)");
    const int span = std::min(window, total);
    int start = target_frame - span / 2;
    start = std::max(0, std::min(start, total - span));
    sel.start = start;
    sel.count = span;
  }

  bgsub::Sequence seq = load_selected(sel);
  const Matrix d = bgsub::sequence_to_matrix(seq);
  rpca::LSDecomposition dec = rpca::decompose(d, rc);
  bgsub::DetectResult det = bgsub::detect(dec.S, seq.h, seq.w);

  ensure_dir(out / "L");
  ensure_dir(out / "S");
  for (int j = 0; j < seq.n(); ++j) {
    const std::string tag = zpad(seq.frame_ids[static_cast<std::size_t>(j)]);
    write_rescaled_pgm(out / "L" / ("frame_" + tag + ".pgm"), column_of(dec.L, j), seq.h, seq.w);
    write_rescaled_pgm(out / "S" / ("frame_" + tag + ".pgm"), column_of(dec.S, j), seq.h, seq.w);
  }
  write_detection(out, det, seq.frame_ids, seq.h, seq.w);
  std::ofstream summary(out / "summary.txt", std::ios::trunc);
  summary << "iterations\t" << dec.iterations_run << "\n"
          << "converged\t" << (dec.converged ? "true" : "false") << "\n"
          << "objective\t" << g17(dec.objective_history.back()) << "\n"
          << "threshold\t" << g17(det.threshold) << "\n";
  if (!summary) throw std::runtime_error("rpca: cannot write summary");
}

inline void run_train(Config& cfg, const std::filesystem::path& out) {
  DataSelection sel = read_data_keys(cfg);
  unet::UNetConfig uc;
  uc.depth = cfg.get_int("unet.depth", uc.depth);
  uc.base_channels = cfg.get_int("unet.base_channels", uc.base_channels);
  uc.seed = cfg.get_uint64("unet.seed", uc.seed);
  train::Phase1Config p1;
  p1.lambda_star = cfg.get_double("train.lambda_star", p1.lambda_star);
  p1.lambda_1 = cfg.get_double("train.lambda_1", p1.lambda_1);
  p1.epochs = cfg.get_int("train.phase1.epochs", p1.epochs);
  p1.lr = cfg.get_double("train.phase1.lr", p1.lr);
  p1.beta1 = cfg.get_double("train.phase1.beta1", p1.beta1);
  p1.beta2 = cfg.get_double("train.phase1.beta2", p1.beta2);
  p1.eps = cfg.get_double("train.phase1.eps", p1.eps);
  p1.seed = uc.seed;
  train::Phase2Config p2;
  p2.iters = cfg.get_int("train.phase2.iters", p2.iters);
  p2.lr = cfg.get_double("train.phase2.lr", p2.lr);
  p2.alpha = cfg.get_double("train.phase2.alpha", p2.alpha);
  p2.tau_star = cfg.get_double("train.phase2.tau_star", p2.tau_star);
  p2.tau_1 = cfg.get_double("train.phase2.tau_1", p2.tau_1);
  cfg.require_fully_consumed();

  bgsub::Sequence seq = load_selected(sel);
  const ad::Tensor d = bgsub::sequence_to_tensor(seq);
  unet::NetworkParams params = unet::build(uc);
  train::TrainResult r1 = train::train_phase1(params, d, p1);
  train::TrainResult r2 = train::train_phase2(params, d, p2, p1.lambda_star, p1.lambda_1);

  ensure_dir(out);
  unet::save_checkpoint(params, (out / "checkpoint.bin").string());
  train::write_loss_history((out / "phase1_loss.tsv").string(), r1.loss_history);
  train::write_loss_history((out / "phase2_loss.tsv").string(), r2.loss_history);
}

inline void run_infer(Config& cfg, const std::filesystem::path& out) {
  DataSelection sel = read_data_keys(cfg);
  const std::string ckpt_path = cfg.require_string("infer.checkpoint");
  cfg.require_fully_consumed();

  unet::NetworkParams params = unet::load_checkpoint(ckpt_path);
  bgsub::Sequence seq = load_selected(sel);
  const ad::Tensor d = bgsub::sequence_to_tensor(seq);
  const ad::Tensor s = unet::forward(params, d, false);
  const Matrix s_mat = unet::to_matrix(s);
  const Matrix l_mat = bgsub::sequence_to_matrix(seq) - s_mat;
  bgsub::DetectResult det = bgsub::detect(s_mat, seq.h, seq.w);

  ensure_dir(out / "S");
  ensure_dir(out / "L");
  for (int j = 0; j < seq.n(); ++j) {
    const std::string tag = zpad(seq.frame_ids[static_cast<std::size_t>(j)]);
    write_rescaled_pgm(out / "S" / ("frame_" + tag + ".pgm"), column_of(s_mat, j), seq.h, seq.w);
    write_rescaled_pgm(out / "L" / ("frame_" + tag + ".pgm"), column_of(l_mat, j), seq.h, seq.w);
  }
  write_detection(out, det, seq.frame_ids, seq.h, seq.w);
  std::ofstream summary(out / "summary.txt", std::ios::trunc);
  summary << "threshold\t" << g17(det.threshold) << "\n";
  if (!summary) throw std::runtime_error("infer: cannot write summary");
}

inline std::vector<std::vector<std::uint8_t>> load_mask_dir(const std::string& dir, int& h,
                                                            int& w) {
  bgsub::Sequence seq = bgsub::load_sequence(dir);
  std::vector<std::vector<std::uint8_t>> masks;
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    std::vector<std::uint8_t> m(seq.frames[f].size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double v = seq.frames[f][i];
      if (v == 0.0)
        m[i] = 0;
      else if (v == 1.0)
        m[i] = 1;
      else
        throw std::runtime_error("eval: '" + dir + "' frame " + std::to_string(f) +
                                 " is not a binary {0,255} mask");
    }
    masks.push_back(std::move(m));
  }
  h = seq.h;
  w = seq.w;
  return masks;
}

inline void run_eval(Config& cfg, const std::filesystem::path& out) {
  const std::string pred_dir = cfg.require_string("eval.pred_dir");
  const std::string truth_dir = cfg.require_string("eval.truth_dir");
  cfg.require_fully_consumed();

  int ph = 0, pw = 0, th = 0, tw = 0;
  const auto pred = load_mask_dir(pred_dir, ph, pw);
  const auto truth = load_mask_dir(truth_dir, th, tw);
  if (ph != th || pw != tw)
    throw std::runtime_error("eval: prediction and truth mask sizes differ");
  bgsub::EvalReport rep = bgsub::evaluate(pred, truth);

  ensure_dir(out);
  std::ofstream os(out / "metrics.txt", std::ios::trunc);
  char buf[64];
  auto metric = [&](const char* name, double v, bool defined) {
    if (defined) {
      std::snprintf(buf, sizeof(buf), "%s\t%.6f\n", name, v);
      os << buf;
    } else {
      os << name << "\tundefined\n";
    }
  };
  metric("precision", rep.precision, rep.precision_defined);
  metric("recall", rep.recall, rep.recall_defined);
  metric("f1", rep.f1, rep.f1_defined);
  os << "tp\t" << rep.tp << "\nfp\t" << rep.fp << "\nfn\t" << rep.fn << "\n";
  if (!os) throw std::runtime_error("eval: cannot write metrics");
}

}  // namespace detail

// Entry point shared by the binary and the in-process tests. `args` excludes
// the program name. Returns the process exit code.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Low-rank + sparse decomposition and unsupervised background subtraction"};
  app.require_subcommand(1);

  struct SubArgs {
    std::string config;
    std::string out = "out";
    std::int64_t seed = -1;
  };
  std::map<std::string, SubArgs> sub_args;
  for (const char* name : {"synth", "rpca", "train", "infer", "eval"}) {
    CLI::App* sub = app.add_subcommand(name);
    SubArgs& sa = sub_args[name];
    sub->add_option("--config", sa.config, "key=value configuration file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", sa.seed, "override the subcommand's primary seed");
    sub->add_option("--out", sa.out, "output directory (default: out)");
  }
  app.get_subcommand("synth")->description("generate a synthetic sequence with ground truth");
  app.get_subcommand("rpca")->description("low-rank + sparse decomposition of a sequence");
  app.get_subcommand("train")->description("two-phase unsupervised network training");
  app.get_subcommand("infer")->description("sparse-component inference from a checkpoint");
  app.get_subcommand("eval")->description("precision/recall/F1 of masks against ground truth");

  std::vector<const char*> argv;
  argv.push_back("lsprox");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (const char* name : {"synth", "rpca", "train", "infer", "eval"}) {
      if (!app.get_subcommand(name)->parsed()) continue;
      const SubArgs& sa = sub_args[name];
      Config cfg = Config::parse_file(sa.config);
      if (sa.seed >= 0) {
        static const std::map<std::string, std::string> seed_key = {
            {"synth", "synth.seed"}, {"rpca", "data.seed"}, {"train", "unet.seed"},
            {"infer", "data.seed"}};
        auto it = seed_key.find(name);
        if (it != seed_key.end()) cfg.set(it->second, std::to_string(sa.seed));
      }
      const std::filesystem::path out(sa.out);
      const std::string cmd = name;
      if (cmd == "synth")
        detail::run_synth(cfg, out);
      else if (cmd == "rpca")
        detail::run_rpca(cfg, out);
      else if (cmd == "train")
        detail::run_train(cfg, out);
      else if (cmd == "infer")
        detail::run_infer(cfg, out);
      else
        detail::run_eval(cfg, out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace lsprox::cli
