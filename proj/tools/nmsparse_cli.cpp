// nmsparse: command-line front end for mask training, evaluation,
// magnitude pruning, kernel benchmarks and stability certificates.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nmsparse/digits.hpp"
#include "nmsparse/experiments.hpp"
#include "nmsparse/io.hpp"
#include "nmsparse/magnitude.hpp"
#include "nmsparse/sparse_kernel.hpp"
#include "nmsparse/stability.hpp"
#include "nmsparse/training.hpp"

using namespace nmsparse;

namespace {

struct Options {
  std::string images, labels, model, mask, out, plan_out, history, mode, freeze = "deterministic";
  std::size_t epochs = 0, count = 10000, budget = 0, samples = 1000, limit = 0, layer = 0;
  std::size_t reps = 5, channels = 16, batch = 0;
  double lr = 0.0, tau = 0.1, delta = 0.0, update = 0.0, validation = 0.1;
  std::uint64_t seed = 0;
  int lemma = 5;
  unsigned threads = 1;
  bool fixture = false;
  std::vector<std::string> shapes;
};

// Writes TSV records to --out when given, otherwise nowhere.
class Records {
 public:
  explicit Records(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw std::runtime_error("cannot write " + path);
    }
  }
  std::ostream* stream() { return file_.is_open() ? &file_ : nullptr; }

 private:
  std::ofstream file_;
};

Dataset load_dataset(const Options& o) {
  if (o.images.empty() || o.labels.empty())
    throw CLI::ValidationError("--dataset-images and --dataset-labels are required");
  Dataset d = to_dataset(load_idx(o.images, o.labels));
  if (o.limit > 0 && o.limit < d.size()) {
    std::vector<std::size_t> idx(o.limit);
    for (std::size_t i = 0; i < o.limit; ++i) idx[i] = i;
    d = d.subset(idx);
  }
  return d;
}

CompositionalClassifier load_required_model(const Options& o) {
  if (o.model.empty()) throw CLI::ValidationError("--model is required");
  return load_model(o.model);
}

void check_fits(const CompositionalClassifier& m, const Dataset& d) {
  if (m.input_size() != d.features() || m.num_classes() != d.num_classes)
    throw std::invalid_argument("model expects " + std::to_string(m.input_size()) + " inputs and " +
                                std::to_string(m.num_classes()) + " classes, dataset has " +
                                std::to_string(d.features()) + " and " +
                                std::to_string(d.num_classes));
}

void print_dense_history(const TrainHistory& h) {
  std::printf("%5s  %10s  %8s  %8s  %9s\n", "epoch", "loss", "val top1", "val top5", "lr");
  for (const auto& e : h.epochs)
    std::printf("%5zu  %10.5f  %8.4f  %8.4f  %9.2e\n", e.epoch, e.mean_loss, e.top1, e.top5,
                e.learning_rate);
}

void print_history(const TrainHistory& h, std::ostream* tsv) {
  std::printf("%5s  %10s  %8s  %8s  %9s  %9s  %6s\n", "epoch", "loss", "val top1", "val top5",
              "entropy", "lr", "tau");
  for (const auto& e : h.epochs)
    std::printf("%5zu  %10.5f  %8.4f  %8.4f  %9.5f  %9.2e  %6.3f\n", e.epoch, e.mean_loss, e.top1,
                e.top5, e.mean_entropy, e.learning_rate, e.temperature);
  if (!tsv) return;
  *tsv << "epoch\tloss\ttop1\ttop5\tentropy\tlr\ttau\n";
  tsv->precision(17);
  for (const auto& e : h.epochs)
    *tsv << e.epoch << '\t' << e.mean_loss << '\t' << e.top1 << '\t' << e.top5 << '\t'
         << e.mean_entropy << '\t' << e.learning_rate << '\t' << e.temperature << '\n';
}

// ---------------------------------------------------------------------------

int run_make_digits(const Options& o) {
  if (o.images.empty() || o.labels.empty())
    throw CLI::ValidationError("--dataset-images and --dataset-labels name the output files");
  const IdxDataset d = make_digits(o.count, o.seed);
  save_idx(o.images, o.labels, d);
  std::printf("wrote %zu digits of %zux%zu to %s and %s\n", d.count, d.rows, d.cols,
              o.images.c_str(), o.labels.c_str());
  return 0;
}

int run_pretrain(const Options& o) {
  if (o.out.empty()) throw CLI::ValidationError("--out is required");
  const Dataset all = load_dataset(o);
  if (all.height != all.width) throw std::invalid_argument("pretrain expects square images");
  auto [train, validation] = split_dataset(all, o.validation, o.seed + 1);
  CompositionalClassifier m = make_digit_classifier(all.height, o.channels, all.num_classes);
  m.init_weights(o.seed);
  DenseTrainConfig cfg;
  cfg.seed = o.seed;
  if (o.epochs) cfg.epochs = o.epochs;
  if (o.lr > 0) cfg.learning_rate = o.lr;
  if (o.batch) cfg.batch_size = o.batch;
  const TrainHistory h = train_dense(m, train, validation, cfg, [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %zu loss %.5f val top1 %.4f\n", e.epoch, e.mean_loss, e.top1);
  });
  print_dense_history(h);
  save_model(o.out, m);
  std::printf("wrote %s (weights crc32 %08x)\n", o.out.c_str(), weights_checksum(m));
  return 0;
}

int run_train_mask(const Options& o) {
  if (o.out.empty()) throw CLI::ValidationError("--out is required");
  CompositionalClassifier m = load_required_model(o);
  const Dataset all = load_dataset(o);
  check_fits(m, all);
  auto [train, validation] = split_dataset(all, o.validation, o.seed + 1);
  TrainConfig cfg;
  cfg.seed = o.seed;
  cfg.temperature = o.tau;
  if (o.epochs) cfg.epochs = o.epochs;
  if (o.lr > 0) cfg.learning_rate = o.lr;
  if (o.batch) cfg.batch_size = o.batch;
  cfg.freeze_mode = o.freeze == "stochastic" ? FreezeMode::Stochastic : FreezeMode::Deterministic;
  cfg.freeze_seed = o.seed;
  cfg.validate();
  const std::uint32_t before = weights_checksum(m);
  TrainHistory h;
  try {
    h = train_masks(m, train, validation, cfg, [](const EpochRecord& e) {
      std::fprintf(stderr, "epoch %zu loss %.5f val top1 %.4f entropy %.5f\n", e.epoch,
                   e.mean_loss, e.top1, e.mean_entropy);
    });
  } catch (const TrainingDiverged& e) {
    const std::string dump = o.out + ".diverged.nmsk";
    MaskSet set;
    set.config = m.config;
    // Dump the argmax masks of the logits at the point of failure.
    for (std::size_t i = 0, k = 0; i < m.layers.size(); ++i) {
      if (!m.layers[i].maskable || k >= e.snapshot.size()) continue;
      const FrozenMask f = freeze(e.snapshot[k++], PatternMatrix(m.config), FreezeMode::Deterministic);
      set.layers.push_back(mask_record(m.layers[i].name, f.mask, FreezeMode::Deterministic, 0));
    }
    save_masks(dump, set);
    std::fprintf(stderr, "training diverged at epoch %zu batch %zu; masks dumped to %s\n", e.epoch,
                 e.batch, dump.c_str());
    return 3;
  }
  Records rec(o.history);
  print_history(h, rec.stream());
  if (weights_checksum(m) != before) throw std::logic_error("pretrained weights changed");
  save_masks(o.out, masks_from_model(m));
  std::printf("wrote %s; weights crc32 %08x unchanged\n", o.out.c_str(), before);
  return 0;
}

int run_eval(const Options& o) {
  CompositionalClassifier m = load_required_model(o);
  const Dataset d = load_dataset(o);
  check_fits(m, d);
  if (!o.mask.empty()) apply_masks(m, load_masks(o.mask));
  const ForwardMode mode = o.mode.empty() ? (m.has_frozen_masks() ? ForwardMode::Hard : ForwardMode::Dense)
                                          : parse_forward_mode(o.mode);
  if (mode == ForwardMode::Soft && !m.has_logits())
    throw std::invalid_argument("soft mode needs mask logits, which are not stored in files");
  const Accuracy a = evaluate(m, d, mode);
  std::printf("%-6s  %8s  %8s  %8s\n", "mode", "samples", "top1", "top5");
  std::printf("%-6s  %8zu  %8.4f  %8.4f\n", to_string(mode), d.size(), a.top1, a.top5);
  Records rec(o.out);
  if (auto* s = rec.stream()) {
    s->precision(17);
    *s << "mode\tsamples\ttop1\ttop5\n" << to_string(mode) << '\t' << d.size() << '\t' << a.top1 << '\t' << a.top5 << '\n';
  }
  return 0;
}

int run_prune_magnitude(const Options& o) {
  const CompositionalClassifier m = load_required_model(o);
  std::vector<PermutationResult> plain, searched;
  const EffectiveWeights plain_w = magnitude_weights(m, 0, &plain);
  std::optional<EffectiveWeights> searched_w;
  if (o.budget > 0) searched_w = magnitude_weights(m, o.budget, &searched);

  std::printf("%-10s  %6s  %6s  %10s  %10s  %8s  %6s\n", "layer", "rows", "cols", "efficacy",
              "permuted", "evals", "swaps");
  MaskSet set;
  set.config = m.config;
  std::size_t k = 0;
  for (const Layer& l : m.layers) {
    if (!l.maskable) continue;
    const auto& p = plain[k];
    set.layers.push_back(mask_record(l.name, p.mask, FreezeMode::Deterministic, 0));
    if (searched_w) {
      const auto& s = searched[k];
      std::printf("%-10s  %6zu  %6zu  %10.6f  %10.6f  %8zu  %6zu\n", l.name.c_str(), p.mask.rows,
                  p.mask.cols, p.plan.score_before, s.plan.score_after, s.plan.evaluations, s.plan.swaps);
    } else {
      std::printf("%-10s  %6zu  %6zu  %10.6f  %10s  %8s  %6s\n", l.name.c_str(), p.mask.rows,
                  p.mask.cols, p.plan.score_before, "-", "-", "-");
    }
    ++k;
  }
  if (!o.out.empty()) {
    save_masks(o.out, set);
    std::printf("wrote unpermuted magnitude masks to %s\n", o.out.c_str());
  }
  if (searched_w && !o.plan_out.empty()) {
    std::ofstream f(o.plan_out);
    f << "layer\tposition\tcolumn\n";
    k = 0;
    for (const Layer& l : m.layers) {
      if (!l.maskable) continue;
      const auto& order = searched[k++].plan.order;
      for (std::size_t c = 0; c < order.size(); ++c) f << l.name << '\t' << c << '\t' << order[c] << '\n';
    }
    std::printf("wrote column permutations to %s\n", o.plan_out.c_str());
  }
  if (!o.images.empty()) {
    const Dataset d = load_dataset(o);
    check_fits(m, d);
    const Accuracy dense = evaluate(m, d, ForwardMode::Dense);
    const Accuracy mag = evaluate(m, plain_w, d);
    std::printf("%-10s  %8s  %8s\n", "weights", "top1", "top5");
    std::printf("%-10s  %8.4f  %8.4f\n", "dense", dense.top1, dense.top5);
    std::printf("%-10s  %8.4f  %8.4f\n", "magnitude", mag.top1, mag.top5);
    if (searched_w) {
      const Accuracy perm = evaluate(m, *searched_w, d);
      std::printf("%-10s  %8.4f  %8.4f\n", "permuted", perm.top1, perm.top5);
    }
  }
  return 0;
}

BenchShape parse_shape(const std::string& s) {
  BenchShape b;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> b.m >> x1 >> b.k >> x2 >> b.n) || x1 != 'x' || x2 != 'x' || in.peek() != EOF)
    throw CLI::ValidationError("--shape expects MxKxN, got " + s);
  return b;
}

int run_bench(const Options& o) {
  std::vector<BenchShape> shapes;
  for (const auto& s : o.shapes) shapes.push_back(parse_shape(s));
  if (shapes.empty()) shapes.push_back({1024, 1024, 1024});
  BenchOptions b;
  b.reps = o.reps;
  b.seed = o.seed;
  b.threads = o.threads;
  const BenchReport r = bench_compare(shapes, b);
  r.write_table(std::cout);
  Records rec(o.out);
  if (auto* s = rec.stream()) r.write_records(*s);
  return 0;
}

int run_certify(const Options& o) {
  if (o.lemma < 1 || o.lemma > 6) throw CLI::ValidationError("--lemma must be 1..6");
  CompositionalClassifier m = o.fixture ? norm_scaled_classifier(o.seed) : load_required_model(o);
  if (!o.mask.empty()) apply_masks(m, load_masks(o.mask));
  const NormProfile prof = norm_profile(m);
  std::size_t j = o.layer;
  if (j == 0) {
    j = 1;
    for (std::size_t i = 0; i < m.layers.size(); ++i)
      if (m.layers[i].maskable) {
        j = i + 1;
        break;
      }
  }
  if (j > m.depth()) throw CLI::ValidationError("--layer outside 1.." + std::to_string(m.depth()));
  const Matrix& w = m.layers[j - 1].weights.values;

  std::printf("layer norms:");
  for (double n : prof.norms) std::printf(" %.6g", n);
  std::printf("\nlipschitz bound %.6g\n", lipschitz_bound(prof));
  if (o.lemma == 1) return 0;
  if (o.lemma == 2) {
    std::printf("layer %zu, perturbation norm %.6g: perturbed bound %.6g\n", j, o.delta,
                perturbed_lipschitz_bound(prof, j, o.delta));
    return 0;
  }
  std::optional<BitMask> mask;
  if (m.layers[j - 1].frozen) mask = m.layers[j - 1].frozen->mask;
  if (o.lemma == 3) {
    if (!mask) throw CLI::ValidationError("--lemma 3 needs a mask on the chosen layer (--mask)");
    const Perturbation p = mask_to_perturbation(*mask, w);
    std::printf("layer %zu: ||(B-1)W|| = %.6g <= ||W|| = %.6g\n", j, p.norm, norm_inf(w));
    return 0;
  }

  std::vector<std::vector<double>> xs;
  if (o.fixture) {
    xs = ball_samples(o.samples, m.input_size(), o.seed + 1);
  } else {
    const Dataset d = load_dataset(o);
    check_fits(m, d);
    for (std::size_t i = 0; i < d.size(); ++i) xs.emplace_back(d.sample(i).begin(), d.sample(i).end());
  }
  double delta = o.delta;
  if (o.lemma == 4 && mask) delta = mask_to_perturbation(*mask, w).norm;

  std::vector<StabilityCertificate> certs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (o.lemma == 4) certs.push_back(stability_margin(m, prof, xs[i], j, delta, i));
    if (o.lemma == 5) certs.push_back(masking_stability(m, prof, xs[i], j, i));
    if (o.lemma == 6) certs.push_back(update_masking_stability(m, prof, xs[i], j, o.update, i));
  }
  std::size_t guaranteed = 0, vacuous = 0;
  for (const auto& c : certs) {
    guaranteed += c.stable_guaranteed;
    vacuous += c.vacuous;
  }
  std::printf("%-6s  %5s  %8s  %10s  %8s  %9s\n", "lemma", "layer", "samples", "guaranteed",
              "vacuous", "bias-free");
  std::printf("%-6d  %5zu  %8zu  %10zu  %8zu  %9s\n", o.lemma, j, certs.size(), guaranteed,
              vacuous, prof.bias_free_before(j) ? "yes" : "no");
  if (!prof.bias_free_before(j))
    std::printf("warning: layers before %zu carry biases, so the certificates are not valid\n", j);
  Records rec(o.out);
  if (auto* s = rec.stream()) write_certificates(*s, certs);
  return 0;
}

int run_inspect(const Options& o) {
  if (o.model.empty() && o.mask.empty()) throw CLI::ValidationError("give --model and/or --mask");
  if (!o.model.empty()) {
    const CompositionalClassifier m = load_model(o.model);
    const NormProfile p = norm_profile(m);
    std::printf("model %s: %d:%d sparsity, %zu layers, weights crc32 %08x\n", o.model.c_str(),
                m.config.kept(), m.config.block_len(), m.depth(),
                weights_checksum(m));
    std::printf("%-10s  %-6s  %-8s  %6s  %6s  %6s  %8s  %10s  %4s\n", "layer", "kind", "act", "rows",
                "cols", "real", "maskable", "norm", "bias");
    for (std::size_t i = 0; i < m.depth(); ++i) {
      const Layer& l = m.layers[i];
      std::printf("%-10s  %-6s  %-8s  %6zu  %6zu  %6zu  %8s  %10.5g  %4s\n", l.name.c_str(),
                  l.kind == LayerKind::Conv ? "conv" : "linear",
                  l.activation == Activation::Relu ? "relu" : "identity", l.weights.values.rows(),
                  l.weights.values.cols(), l.weights.real_cols, l.maskable ? "yes" : "no",
                  p.norms[i], p.zero_bias[i] ? "zero" : "set");
    }
  }
  if (!o.mask.empty()) {
    const MaskSet set = load_masks(o.mask);
    std::printf("masks %s: %d:%d, %zu layers\n", o.mask.c_str(), set.config.kept(),
                set.config.block_len(), set.layers.size());
    std::printf("%-10s  %6s  %6s  %8s  %8s  %s\n", "layer", "rows", "cols", "blocks", "sparsity",
                "pattern histogram");
    for (const auto& r : set.layers) {
      const MaskStats st = mask_statistics(record_to_mask(r, set.config));
      std::string hist;
      for (std::size_t c : st.histogram) hist += (hist.empty() ? "" : " ") + std::to_string(c);
      std::printf("%-10s  %6u  %6u  %8zu  %8.4f  %s\n", r.name.c_str(), r.rows, r.cols, st.blocks,
                  st.sparsity(), hist.c_str());
    }
  }
  return 0;
}

// Fills options absent from the command line from `key=value` lines.
// Blank lines and lines starting with '#' are skipped.
void apply_config(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto trim = [](std::string t) {
      const auto a = t.find_first_not_of(" \t\r"), b = t.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : t.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ConversionError(path + ":" + std::to_string(n) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt || key == "config")
      throw CLI::ConversionError(path + ":" + std::to_string(n) + ": unknown key " + key);
    if (opt->count() > 0) continue;  // the flag wins
    opt->add_result(trim(line.substr(eq + 1)));
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"N:M mask learning, magnitude baselines and stability certificates"};
  app.require_subcommand(1);
  Options o;

  auto data_flags = [&](CLI::App* s) {
    s->add_option("--dataset-images", o.images, "IDX image file");
    s->add_option("--dataset-labels", o.labels, "IDX label file");
    s->add_option("--limit", o.limit, "use only the first N samples");
  };
  auto* mk = app.add_subcommand("make-digits", "write a procedural digit dataset as IDX files");
  mk->add_option("--dataset-images", o.images, "output image file")->required();
  mk->add_option("--dataset-labels", o.labels, "output label file")->required();
  mk->add_option("--count", o.count, "number of digits");
  mk->add_option("--seed", o.seed);

  auto* pre = app.add_subcommand("pretrain", "train dense weights for the digit classifier");
  data_flags(pre);
  pre->add_option("--epochs", o.epochs);
  pre->add_option("--lr", o.lr);
  pre->add_option("--batch", o.batch);
  pre->add_option("--channels", o.channels, "conv channels");
  pre->add_option("--seed", o.seed);
  pre->add_option("--validation", o.validation, "held-out fraction");
  pre->add_option("--out", o.out, "model file to write");

  auto* tm = app.add_subcommand("train-mask", "learn 2:4 masks over frozen weights");
  data_flags(tm);
  tm->add_option("--model", o.model);
  tm->add_option("--epochs", o.epochs);
  tm->add_option("--lr", o.lr);
  tm->add_option("--tau", o.tau, "Gumbel-Softmax temperature");
  tm->add_option("--batch", o.batch);
  tm->add_option("--seed", o.seed);
  tm->add_option("--validation", o.validation, "held-out fraction");
  tm->add_option("--freeze", o.freeze, "final mask draw")->check(CLI::IsMember({"deterministic", "stochastic"}));
  tm->add_option("--out", o.out, "mask file to write");
  tm->add_option("--history", o.history, "per-epoch TSV records");

  auto* ev = app.add_subcommand("eval", "top-1 and top-5 accuracy");
  data_flags(ev);
  ev->add_option("--model", o.model);
  ev->add_option("--mask", o.mask);
  ev->add_option("--mode", o.mode, "dense, soft or hard")->check(CLI::IsMember({"dense", "soft", "hard"}));
  ev->add_option("--out", o.out, "TSV record");

  auto* pm = app.add_subcommand("prune-magnitude", "magnitude 2:4 masks, optionally with column permutation");
  data_flags(pm);
  pm->add_option("--model", o.model);
  pm->add_option("--budget", o.budget, "swap evaluations for the permutation search (0: none)");
  pm->add_option("--out", o.out, "mask file for the unpermuted magnitude masks");
  pm->add_option("--plan-out", o.plan_out, "TSV of the searched column orders");

  auto* be = app.add_subcommand("bench", "dense matmul against compressed 2:4 spmm");
  be->add_option("--shape", o.shapes, "MxKxN, repeatable (default 1024x1024x1024)");
  be->add_option("--reps", o.reps)->check(CLI::Range(5, 100000));
  be->add_option("--threads", o.threads);
  be->add_option("--seed", o.seed);
  be->add_option("--out", o.out, "per-repetition TSV records");

  auto* ce = app.add_subcommand("certify", "prediction-stability bounds and certificates");
  data_flags(ce);
  ce->add_option("--model", o.model);
  ce->add_option("--mask", o.mask);
  ce->add_flag("--fixture", o.fixture, "use the built-in norm-scaled two-layer model and ball inputs");
  ce->add_option("--samples", o.samples, "inputs drawn for --fixture");
  ce->add_option("--seed", o.seed);
  ce->add_option("--lemma", o.lemma,
                 "1 lipschitz, 2 perturbed lipschitz, 3 mask norm, 4 perturbation, 5 any mask, "
                 "6 mask after update")
      ->check(CLI::Range(1, 6));
  ce->add_option("--layer", o.layer, "1-based layer (default: first maskable)");
  ce->add_option("--delta", o.delta, "perturbation norm for lemmas 2 and 4");
  ce->add_option("--update", o.update, "update norm for lemma 6");
  ce->add_option("--out", o.out, "per-sample TSV records");

  auto* in = app.add_subcommand("inspect", "describe a model or mask file");
  in->add_option("--model", o.model);
  in->add_option("--mask", o.mask);

  std::string config;
  for (auto* s : app.get_subcommands({}))
    s->add_option("--config", config, "key=value file; command-line flags take precedence");

  CLI11_PARSE(app, argc, argv);
  try {
    if (!config.empty()) apply_config(*app.get_subcommands().front(), config);
    if (*mk) return run_make_digits(o);
    if (*pre) return run_pretrain(o);
    if (*tm) return run_train_mask(o);
    if (*ev) return run_eval(o);
    if (*pm) return run_prune_magnitude(o);
    if (*be) return run_bench(o);
    if (*ce) return run_certify(o);
    if (*in) return run_inspect(o);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
