#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "nmsparse/conv_engine.hpp"
#include "nmsparse/digits.hpp"
#include "nmsparse/experiments.hpp"
#include "nmsparse/io.hpp"
#include "nmsparse/magnitude.hpp"
#include "nmsparse/mask_sampler.hpp"
#include "nmsparse/sparse_kernel.hpp"
#include "nmsparse/stability.hpp"
#include "nmsparse/training.hpp"

namespace py = pybind11;
using namespace nmsparse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  return Matrix(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> from_matrix(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::memcpy(out.mutable_data(), m.data().data(), m.size() * sizeof(double));
  return out;
}

BitMask to_mask(const ByteArray& a, const NmConfig& cfg) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d mask");
  BitMask m(a.shape(0), a.shape(1), cfg);
  std::memcpy(m.bits.data(), a.data(), m.bits.size());
  return m;
}

py::array_t<std::uint8_t> from_mask(const BitMask& m) {
  py::array_t<std::uint8_t> out({m.rows, m.cols});
  std::memcpy(out.mutable_data(), m.bits.data(), m.bits.size());
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Dataset dataset_from_files(const std::string& images, const std::string& labels) {
  return to_dataset(load_idx(images, labels));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "N:M structured sparsity: masks, kernels, baselines and stability bounds";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<NmConfig>(m, "NmConfig")
      .def(py::init<int, int>(), py::arg("block_len") = 4, py::arg("kept") = 2)
      .def_property_readonly("block_len", &NmConfig::block_len)
      .def_property_readonly("kept", &NmConfig::kept)
      .def("__repr__", [](const NmConfig& c) {
        return "NmConfig(" + std::to_string(c.kept()) + ":" + std::to_string(c.block_len()) + ")";
      });

  m.def("pattern_count", &pattern_count, py::arg("config") = NmConfig{});
  m.def(
      "patterns",
      [](const NmConfig& cfg) {
        const PatternMatrix p(cfg);
        py::array_t<std::uint8_t> out({p.count(), p.block_len()});
        for (std::size_t k = 0; k < p.count(); ++k)
          for (std::size_t i = 0; i < p.block_len(); ++i) out.mutable_at(k, i) = p.bit(k, i);
        return out;
      },
      py::arg("config") = NmConfig{}, "Keep patterns, one per row, in choice-index order.");

  m.def(
      "validate_mask",
      [](const ByteArray& mask, const NmConfig& cfg) -> std::optional<std::string> {
        if (auto v = validate_mask(to_mask(mask, cfg))) return v->message;
        return std::nullopt;
      },
      py::arg("mask"), py::arg("config") = NmConfig{},
      "None for a valid mask, otherwise a description of the first bad block.");

  m.def(
      "random_mask",
      [](std::size_t rows, std::size_t cols, std::uint64_t seed, const NmConfig& cfg) {
        return from_mask(random_mask(rows, cols, cfg, seed, 0));
      },
      py::arg("rows"), py::arg("cols"), py::arg("seed") = 0, py::arg("config") = NmConfig{});

  m.def(
      "magnitude_mask",
      [](const Array& w, const NmConfig& cfg) {
        const Matrix mw = to_matrix(w);
        return from_mask(magnitude_prune_matrix(WeightMatrix{mw, mw.cols()}, cfg));
      },
      py::arg("weights"), py::arg("config") = NmConfig{});

  m.def(
      "efficacy_score",
      [](const Array& w, const ByteArray& mask) {
        return efficacy_score(to_matrix(w), to_mask(mask, NmConfig{}));
      },
      py::arg("weights"), py::arg("mask"));

  m.def(
      "permutation_search",
      [](const Array& w, std::size_t budget) {
        const Matrix mw = to_matrix(w);
        const PermutationResult r = permutation_search(WeightMatrix{mw, mw.cols()}, budget);
        py::dict d;
        d["order"] = r.plan.order;
        d["mask"] = from_mask(r.mask);
        d["score_before"] = r.plan.score_before;
        d["score_after"] = r.plan.score_after;
        d["evaluations"] = r.plan.evaluations;
        d["swaps"] = r.plan.swaps;
        d["masked_weights"] = from_matrix(permuted_masked_weights(mw, r));
        return d;
      },
      py::arg("weights"), py::arg("budget"),
      "Greedy column-swap search; masked_weights are in the original column order.");

  m.def(
      "spmm",
      [](const Array& w, const ByteArray& mask, const Array& x) {
        const Matrix mw = to_matrix(w);
        return from_matrix(spmm(compress(mw, to_mask(mask, NmConfig{})), to_matrix(x)));
      },
      py::arg("weights"), py::arg("mask"), py::arg("x"),
      "(mask * weights) @ x through the compressed 2:4 kernel.");

  m.def(
      "flop_count",
      [](std::size_t rows, std::size_t cols, std::size_t l) {
        const FlopReport f = flop_count(rows, cols, l, NmConfig{});
        py::dict d;
        d["dense_macs"] = f.dense_macs;
        d["sparse_macs"] = f.sparse_macs;
        d["ratio"] = f.ratio;
        d["bytes_dense"] = f.bytes_dense;
        d["bytes_compressed"] = f.bytes_compressed;
        return d;
      },
      py::arg("rows"), py::arg("cols"), py::arg("l"));

  m.def(
      "conv2d",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
         const std::string& method) {
        if (x.ndim() != 3 || k.ndim() != 4) throw std::invalid_argument("expected x[c,h,w], k[o,c,kh,kw]");
        const Tensor3 t(x.shape(0), x.shape(1), x.shape(2),
                        std::vector<double>(x.data(), x.data() + x.size()));
        const KernelStack ks(k.shape(0), k.shape(1), k.shape(2), k.shape(3),
                             std::vector<double>(k.data(), k.data() + k.size()));
        Tensor3 y;
        if (method == "direct") {
          y = conv_direct(t, ks);
        } else if (method == "matmul") {
          y = conv_matmul(kernels_to_weight_matrix(ks, true), unfold(t, ks.kh, ks.kw, 4));
        } else {
          throw std::invalid_argument("method must be 'direct' or 'matmul'");
        }
        py::array_t<double> out({y.channels, y.height, y.width});
        std::memcpy(out.mutable_data(), y.data.data(), y.data.size() * sizeof(double));
        return out;
      },
      py::arg("x"), py::arg("kernels"), py::arg("method") = "matmul",
      "Same-size stride-1 convolution with zero padding.");

  m.def(
      "gumbel_sample",
      [](const Array& logits, double temperature, std::uint64_t seed) {
        if (logits.ndim() != 2 || logits.shape(1) != 6)
          throw std::invalid_argument("expected logits of shape (blocks, 6)");
        const std::size_t blocks = logits.shape(0);
        MaskLogits l(1, 4 * blocks, NmConfig{}, temperature);
        l.logits = to_vector(logits);
        const GumbelNoise g = sample_gumbel(blocks, 6, seed);
        const SoftChoice soft = gs_soft_sample(l, g);
        const HardChoice hard = gs_hard_sample(l, g);
        py::array_t<double> z({blocks, std::size_t{6}});
        std::memcpy(z.mutable_data(), soft.z.data(), soft.z.size() * sizeof(double));
        return py::make_tuple(z, hard.index);
      },
      py::arg("logits"), py::arg("temperature"), py::arg("seed") = 0,
      "Relaxed and hard 2:4 choices for one shared Gumbel draw.");

  py::class_<Accuracy>(m, "Accuracy")
      .def_readonly("top1", &Accuracy::top1)
      .def_readonly("top5", &Accuracy::top5)
      .def("__repr__", [](const Accuracy& a) {
        return "Accuracy(top1=" + std::to_string(a.top1) + ", top5=" + std::to_string(a.top5) + ")";
      });

  py::class_<CompositionalClassifier>(m, "Classifier")
      .def_static("load", &load_model, py::arg("path"))
      .def_static("norm_scaled", &norm_scaled_classifier, py::arg("seed") = 0,
                  "Two-layer 4-4-3 model with every layer norm 0.5.")
      .def("save", [](const CompositionalClassifier& c, const std::string& p) { save_model(p, c); })
      .def("apply_masks",
           [](CompositionalClassifier& c, const std::string& p) { apply_masks(c, load_masks(p)); })
      .def_property_readonly("depth", &CompositionalClassifier::depth)
      .def_property_readonly("layer_names",
                             [](const CompositionalClassifier& c) {
                               std::vector<std::string> n;
                               for (const auto& l : c.layers) n.push_back(l.name);
                               return n;
                             })
      .def("weights", [](const CompositionalClassifier& c,
                         std::size_t i) { return from_matrix(c.layers.at(i).weights.values); })
      .def("checksum", &weights_checksum)
      .def(
          "predict",
          [](const CompositionalClassifier& c, const Array& x, const std::string& mode) {
            return forward(c, to_vector(x), parse_forward_mode(mode));
          },
          py::arg("x"), py::arg("mode") = "dense")
      .def(
          "evaluate",
          [](const CompositionalClassifier& c, const std::string& images, const std::string& labels,
             const std::string& mode) {
            return evaluate(c, dataset_from_files(images, labels), parse_forward_mode(mode));
          },
          py::arg("images"), py::arg("labels"), py::arg("mode") = "dense")
      .def(
          "certify",
          [](const CompositionalClassifier& c, const Array& x, std::size_t layer, int lemma,
             double norm) {
            const NormProfile p = norm_profile(c);
            const std::vector<double> v = to_vector(x);
            StabilityCertificate cert;
            if (lemma == 4) cert = stability_margin(c, p, v, layer, norm);
            else if (lemma == 5) cert = masking_stability(c, p, v, layer);
            else if (lemma == 6) cert = update_masking_stability(c, p, v, layer, norm);
            else throw std::invalid_argument("lemma must be 4, 5 or 6");
            py::dict d;
            d["gamma"] = cert.gamma;
            d["bound"] = cert.bound;
            d["guaranteed"] = cert.stable_guaranteed;
            d["vacuous"] = cert.vacuous;
            d["bias_free"] = cert.bias_free;
            return d;
          },
          py::arg("x"), py::arg("layer"), py::arg("lemma") = 5, py::arg("norm") = 0.0)
      .def("lipschitz_bound",
           [](const CompositionalClassifier& c) { return lipschitz_bound(c); });

  m.def(
      "make_digits",
      [](std::size_t count, std::uint64_t seed, const std::string& images,
         const std::string& labels) { save_idx(images, labels, make_digits(count, seed)); },
      py::arg("count"), py::arg("seed"), py::arg("images"), py::arg("labels"),
      "Writes a procedural digit dataset as a pair of IDX files.");

  m.def(
      "load_idx",
      [](const std::string& images, const std::string& labels) {
        const IdxDataset d = load_idx(images, labels);
        py::array_t<std::uint8_t> img({d.count, d.rows, d.cols});
        std::memcpy(img.mutable_data(), d.images.data(), d.images.size());
        py::array_t<std::uint8_t> lbl(d.count);
        std::memcpy(lbl.mutable_data(), d.labels.data(), d.labels.size());
        return py::make_tuple(img, lbl);
      },
      py::arg("images"), py::arg("labels"));

  m.def(
      "load_masks",
      [](const std::string& path) {
        const MaskSet set = load_masks(path);
        py::dict d;
        for (const auto& r : set.layers) d[py::str(r.name)] = from_mask(record_to_mask(r, set.config));
        return d;
      },
      py::arg("path"), "Layer name to 0/1 mask array.");
}
