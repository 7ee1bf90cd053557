#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flowmil/eval/eval.hpp"
#include "flowmil/mil/mil.hpp"
#include "flowmil/motion/flow.hpp"
#include "flowmil/motion/generate.hpp"
#include "flowmil/pipeline/pipeline.hpp"
#include "flowmil/tan/tan.hpp"

namespace py = pybind11;
using namespace flowmil;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

nn::Tensor to_tensor(const FloatArray& a) {
    if (a.ndim() < 1 || a.ndim() > 4) throw Error("shape", "expected 1..4 dimensional array");
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
    nn::Tensor t;
    t.resize(shape);
    std::copy(a.data(), a.data() + a.size(), t.v.begin());
    return t;
}

py::array_t<float> from_tensor(const nn::Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int i = 0; i < t.rank; ++i) shape.push_back(t.dim(i));
    py::array_t<float> a(shape);
    std::copy(t.v.begin(), t.v.end(), a.mutable_data());
    return a;
}

py::array_t<float> from_vector(const std::vector<float>& v) {
    py::array_t<float> a(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

motion::Image to_image(const ByteArray& a) {
    if (a.ndim() != 2) throw Error("shape", "expected a 2-d grayscale image");
    motion::Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), img.px.begin());
    return img;
}

nn::LayerParams make_params(const FloatArray& w, const FloatArray& b) {
    nn::LayerParams p;
    p.w = to_tensor(w);
    p.b = to_tensor(b);
    p.reset_accumulators();
    return p;
}

nn::Act act_from_string(const std::string& s) {
    if (s == "identity") return nn::Act::identity;
    if (s == "relu") return nn::Act::relu;
    if (s == "tanh") return nn::Act::tanh;
    if (s == "sigmoid") return nn::Act::sigmoid;
    throw Error("config", "unknown activation '" + s + "'");
}

std::vector<float> to_float_vector(const FloatArray& a) {
    return {a.data(), a.data() + a.size()};
}

class TanExtractor {
public:
    explicit TanExtractor(const std::string& path) : net_(tan::load_tan_checkpoint(path)) {}

    py::array_t<float> extract(const FloatArray& stack) const {
        return from_vector(tan::extract_feature(to_tensor(stack), net_));
    }

    py::tuple forward(const FloatArray& stack) const {
        auto [recon, bn] = tan::tan_forward(to_tensor(stack), net_);
        return py::make_tuple(from_tensor(recon), from_tensor(bn));
    }

private:
    tan::TanNet net_;
};

class MilScorer {
public:
    MilScorer(const std::string& path, const std::string& mode, const std::string& norm)
        : model_(mil::load_mil_checkpoint(path)) {
        model_.cfg.mode = mil::mode_from_string(mode);
        if (norm == "softmax") model_.cfg.attention_norm = mil::AttentionNorm::softmax;
        else if (norm == "sigmoid") model_.cfg.attention_norm = mil::AttentionNorm::sigmoid;
        else throw Error("config", "attention norm must be softmax or sigmoid");
    }

    py::array_t<float> scores(const FloatArray& features) const {
        return from_vector(mil::score_segments(to_tensor(features), model_));
    }

    py::array_t<float> weights(const FloatArray& features) const {
        return from_vector(mil::attention_weights(to_tensor(features), model_));
    }

    double bag_score(const FloatArray& features) const {
        return mil::bag_score(to_tensor(features), model_);
    }

private:
    mil::MilModel model_;
};

}  // namespace

PYBIND11_MODULE(flowmil, m) {
    m.doc() = "Motion-aware video anomaly detection: flow autoencoder features and "
              "attention MIL ranking";
    m.attr("__version__") = pipeline::kToolVersion;

    py::register_exception<Error>(m, "FlowmilError");

    // nn primitives
    m.def("conv2d_forward",
          [](const FloatArray& x, const FloatArray& w, const FloatArray& b, int stride, int padding) {
              return from_tensor(nn::conv2d_forward(to_tensor(x), make_params(w, b), stride, padding));
          },
          py::arg("x"), py::arg("weights"), py::arg("biases"), py::arg("stride") = 1,
          py::arg("padding") = 0);
    m.def("deconv2d_forward",
          [](const FloatArray& x, const FloatArray& w, const FloatArray& b, int stride, int padding) {
              return from_tensor(nn::deconv2d_forward(to_tensor(x), make_params(w, b), stride, padding));
          },
          py::arg("x"), py::arg("weights"), py::arg("biases"), py::arg("stride") = 1,
          py::arg("padding") = 0);
    m.def("fc_forward",
          [](const FloatArray& x, const FloatArray& w, const FloatArray& b) {
              return from_tensor(nn::fc_forward(to_tensor(x), make_params(w, b)));
          },
          py::arg("x"), py::arg("weights"), py::arg("biases"));
    m.def("activation",
          [](const FloatArray& x, const std::string& kind) {
              return from_tensor(nn::activation(to_tensor(x), act_from_string(kind)));
          },
          py::arg("x"), py::arg("kind"));
    m.def("global_average_pool",
          [](const FloatArray& x) { return from_tensor(nn::global_average_pool(to_tensor(x))); },
          py::arg("x"));
    m.def("softmax",
          [](const FloatArray& x) { return from_tensor(nn::softmax(to_tensor(x))); }, py::arg("x"));
    m.def("dropout",
          [](const FloatArray& x, double rate, bool training, std::uint64_t seed) {
              RngStream rng(seed);
              return from_tensor(nn::dropout_forward(to_tensor(x), rate, training, rng).y);
          },
          py::arg("x"), py::arg("rate"), py::arg("training") = true, py::arg("seed") = 1);
    m.def("adagrad_step",
          [](const FloatArray& param, const FloatArray& accum, const FloatArray& grad, double lr,
             double eps) {
              nn::LayerParams p;
              p.w = to_tensor(param);
              p.w_acc = to_tensor(accum);
              p.b.resize({1});
              p.b_acc.resize({1});
              nn::LayerGradsT<float> g;
              g.dw = to_tensor(grad);
              g.db.resize({1});
              nn::adagrad_step(p, g, static_cast<float>(lr), static_cast<float>(eps));
              return py::make_tuple(from_tensor(p.w), from_tensor(p.w_acc));
          },
          py::arg("param"), py::arg("accum"), py::arg("grad"), py::arg("lr"),
          py::arg("eps") = 1e-8);

    // MIL losses and bag construction
    m.def("max_hinge_loss",
          [](const FloatArray& pos, const FloatArray& neg) {
              return mil::max_hinge_loss(to_float_vector(pos), to_float_vector(neg));
          },
          py::arg("pos_scores"), py::arg("neg_scores"));
    m.def("attention_hinge_loss",
          [](const FloatArray& ps, const FloatArray& pw, const FloatArray& ns, const FloatArray& nw) {
              return mil::attention_hinge_loss(to_float_vector(ps), to_float_vector(pw),
                                               to_float_vector(ns), to_float_vector(nw));
          },
          py::arg("pos_scores"), py::arg("pos_weights"), py::arg("neg_scores"),
          py::arg("neg_weights"));
    m.def("total_loss",
          [](const FloatArray& ps, const FloatArray& pw, const FloatArray& ns, const FloatArray& nw,
             double lambda1, const std::string& mode) {
              return mil::total_loss(to_float_vector(ps), to_float_vector(pw), to_float_vector(ns),
                                     to_float_vector(nw), lambda1, mil::mode_from_string(mode));
          },
          py::arg("pos_scores"), py::arg("pos_weights"), py::arg("neg_scores"),
          py::arg("neg_weights"), py::arg("lambda1") = 8e-5, py::arg("mode") = "attention");
    m.def("build_bag",
          [](const FloatArray& clip_features, int m) {
              if (clip_features.ndim() != 2)
                  throw Error("shape", "clip features must be a (clips, dim) matrix");
              std::vector<std::vector<float>> clips;
              const auto n = clip_features.shape(0);
              const auto d = clip_features.shape(1);
              for (py::ssize_t i = 0; i < n; ++i)
                  clips.emplace_back(clip_features.data() + i * d,
                                     clip_features.data() + (i + 1) * d);
              return from_tensor(mil::build_bag(clips, m));
          },
          py::arg("clip_features"), py::arg("m") = 32);
    m.def("fuse_features",
          [](const FloatArray& a, const FloatArray& b) {
              return from_vector(mil::fuse_features(to_float_vector(a), to_float_vector(b)));
          },
          py::arg("a"), py::arg("b"));

    // evaluation
    m.def("roc_auc",
          [](const FloatArray& scores, const ByteArray& labels) {
              const auto curve =
                  eval::roc_auc(to_float_vector(scores),
                                std::vector<std::uint8_t>(labels.data(), labels.data() + labels.size()));
              py::array_t<double> pts({static_cast<py::ssize_t>(curve.points.size()),
                                       static_cast<py::ssize_t>(2)});
              auto* out = pts.mutable_data();
              for (std::size_t i = 0; i < curve.points.size(); ++i) {
                  out[2 * i] = curve.points[i].first;
                  out[2 * i + 1] = curve.points[i].second;
              }
              return py::make_tuple(pts, curve.auc);
          },
          py::arg("scores"), py::arg("labels"));
    m.def("expand_scores",
          [](const FloatArray& seg, int frame_count) {
              return from_vector(eval::expand_scores(to_float_vector(seg), frame_count));
          },
          py::arg("segment_scores"), py::arg("frame_count"));

    // optical flow
    m.def("block_matching_flow",
          [](const ByteArray& prev, const ByteArray& next, int block, int radius) {
              return from_tensor(
                  motion::block_matching_flow(to_image(prev), to_image(next), {block, radius}));
          },
          py::arg("prev"), py::arg("next"), py::arg("block") = 8, py::arg("radius") = 7);
    m.def("build_flow_stack",
          [](const ByteArray& frames, int block, int radius) {
              if (frames.ndim() != 3) throw Error("shape", "frames must be (16, h, w)");
              std::vector<motion::Image> imgs;
              const auto h = frames.shape(1), w = frames.shape(2);
              for (py::ssize_t i = 0; i < frames.shape(0); ++i) {
                  motion::Image img(static_cast<int>(h), static_cast<int>(w));
                  std::copy(frames.data() + i * h * w, frames.data() + (i + 1) * h * w,
                            img.px.begin());
                  imgs.push_back(std::move(img));
              }
              return from_tensor(motion::build_flow_stack(imgs, {block, radius}).t);
          },
          py::arg("frames"), py::arg("block") = 8, py::arg("radius") = 7);
    m.def("normalize_stack",
          [](const FloatArray& stack) { return from_tensor(motion::normalize_stack(to_tensor(stack))); },
          py::arg("stack"));
    m.def("generate_dataset",
          [](int normal, int anomalous, int frames, int height, int width, std::uint64_t seed) {
              motion::GeneratorConfig cfg;
              cfg.normal_count = normal;
              cfg.anomalous_count = anomalous;
              cfg.frames = frames;
              cfg.height = height;
              cfg.width = width;
              cfg.seed = seed;
              py::list out;
              for (const auto& v : motion::generate_dataset(cfg)) {
                  py::dict d;
                  d["id"] = v.id;
                  d["anomalous"] = v.anomalous;
                  py::array_t<std::uint8_t> fr({static_cast<py::ssize_t>(v.frames.size()),
                                                static_cast<py::ssize_t>(v.height()),
                                                static_cast<py::ssize_t>(v.width())});
                  auto* p = fr.mutable_data();
                  for (const auto& f : v.frames) {
                      std::copy(f.px.begin(), f.px.end(), p);
                      p += f.px.size();
                  }
                  d["frames"] = fr;
                  py::array_t<std::uint8_t> mk(static_cast<py::ssize_t>(v.mask.size()));
                  std::copy(v.mask.begin(), v.mask.end(), mk.mutable_data());
                  d["mask"] = mk;
                  out.append(d);
              }
              return out;
          },
          py::arg("normal") = 2, py::arg("anomalous") = 2, py::arg("frames") = 64,
          py::arg("height") = 64, py::arg("width") = 64, py::arg("seed") = 1);

    // trained-model front ends
    py::class_<TanExtractor>(m, "TanExtractor")
        .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
        .def("extract", &TanExtractor::extract, py::arg("stack"))
        .def("forward", &TanExtractor::forward, py::arg("stack"));
    py::class_<MilScorer>(m, "MilScorer")
        .def(py::init<const std::string&, const std::string&, const std::string&>(),
             py::arg("checkpoint_path"), py::arg("mode") = "attention",
             py::arg("attention_norm") = "softmax")
        .def("scores", &MilScorer::scores, py::arg("features"))
        .def("weights", &MilScorer::weights, py::arg("features"))
        .def("bag_score", &MilScorer::bag_score, py::arg("features"));
}
