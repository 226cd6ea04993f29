#include "fewshot/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"

namespace fewshot {
namespace {

struct Forward {
    Matrix proj_images;  // P' (B x d_joint)
    Matrix proj_texts;   // Q' (N x d_joint)
    std::vector<double> image_norms;
    std::vector<double> text_norms;
    Matrix scores;  // B x N
};

void check_shapes(const ProjectionModel& model, const Batch& batch) {
    batch.validate();
    if (batch.images.cols() != model.image_proj.rows()) {
        throw UsageError("image embeddings " + batch.images.shape_string() + " do not match image projection " +
                         model.image_proj.shape_string());
    }
    if (batch.texts.cols() != model.text_proj.rows()) {
        throw UsageError("text embeddings " + batch.texts.shape_string() + " do not match text projection " +
                         model.text_proj.shape_string());
    }
    if (model.image_proj.cols() != model.text_proj.cols()) {
        throw UsageError("projections disagree on the joint dimension: " + model.image_proj.shape_string() + " vs " +
                         model.text_proj.shape_string());
    }
}

// Scales each row to unit length in place and returns the original norms.
// Zero rows are left as zero.
std::vector<double> normalize_rows(Matrix& m) {
    std::vector<double> norms(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double sq = 0.0;
        for (double v : m.row(r)) sq += v * v;
        norms[r] = std::sqrt(sq);
        if (norms[r] > 0.0)
            for (double& v : m.row(r)) v /= norms[r];
    }
    return norms;
}

Forward forward(const ProjectionModel& model, const Batch& batch) {
    check_shapes(model, batch);
    Forward f;
    f.proj_images = matmul(batch.images, model.image_proj);
    f.proj_texts = matmul(batch.texts, model.text_proj);
    if (model.normalize) {
        f.image_norms = normalize_rows(f.proj_images);
        f.text_norms = normalize_rows(f.proj_texts);
    }
    f.scores = matmul_nt(f.proj_images, f.proj_texts);
    if (model.scale != 1.0)
        for (double& v : f.scores.data()) v *= model.scale;
    return f;
}

// Backprop through row normalization: d/dx (x/|x|) applied to upstream g is
// (g - y (y·g)) / |x| with y = x/|x|.
void unnormalize_grad(Matrix& grad, const Matrix& unit_rows, const std::vector<double>& norms) {
    for (std::size_t r = 0; r < grad.rows(); ++r) {
        if (norms[r] == 0.0) {
            for (double& v : grad.row(r)) v = 0.0;
            continue;
        }
        const auto y = unit_rows.row(r);
        auto g = grad.row(r);
        double dot = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) dot += y[j] * g[j];
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = (g[j] - y[j] * dot) / norms[r];
    }
}

// Mean cross-entropy; overwrites `scores` with softmax probabilities when asked.
double cross_entropy(Matrix& scores, const std::vector<std::size_t>& labels, bool keep_probs) {
    double total = 0.0;
    for (std::size_t b = 0; b < scores.rows(); ++b) {
        auto row = scores.row(b);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        const double log_z = mx + std::log(sum);
        total += log_z - row[labels[b]];
        if (keep_probs)
            for (double& v : row) v = std::exp(v - log_z);
    }
    return total / static_cast<double>(scores.rows());
}

}  // namespace

void Batch::validate() const {
    if (images.rows() == 0) throw UsageError("batch: no images");
    if (texts.rows() < 2) throw UsageError("batch: need at least 2 candidate texts");
    if (labels.size() != images.rows()) {
        throw UsageError("batch: " + std::to_string(labels.size()) + " labels for " + std::to_string(images.rows()) +
                         " images");
    }
    for (std::size_t l : labels) {
        if (l >= texts.rows()) {
            throw UsageError("batch: label " + std::to_string(l) + " out of range for " + std::to_string(texts.rows()) +
                             " classes");
        }
    }
}

void ProjectionModel::validate() const {
    if (image_proj.empty() || text_proj.empty()) throw UsageError("model: empty projection");
    if (image_proj.cols() != text_proj.cols()) {
        throw UsageError("model: joint dimensions differ, " + image_proj.shape_string() + " vs " +
                         text_proj.shape_string());
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) throw UsageError("model: scale must be positive and finite");
    if (!all_finite()) throw NumericError("model: non-finite parameters");
}

ProjectionModel ProjectionModel::kaiming(std::size_t d_img, std::size_t d_txt, std::size_t d_joint, Rng& rng) {
    ProjectionModel m;
    m.image_proj = transpose(kaiming_uniform_init(d_joint, d_img, rng));
    m.text_proj = transpose(kaiming_uniform_init(d_joint, d_txt, rng));
    return m;
}

ProjectionModel ProjectionModel::from_pretrained(const EmbeddingDataset& ds) {
    if (!ds.pretrained) throw ConfigError("dataset has no pretrained projection; zero-shot evaluation needs one");
    ProjectionModel m;
    m.image_proj = ds.pretrained->image;
    m.text_proj = ds.pretrained->text;
    return m;
}

Matrix logits(const ProjectionModel& model, const Batch& batch) { return forward(model, batch).scores; }

double loss(const ProjectionModel& model, const Batch& batch) {
    Forward f = forward(model, batch);
    return cross_entropy(f.scores, batch.labels, false);
}

LossAndGrads loss_and_grads(const ProjectionModel& model, const Batch& batch) {
    Forward f = forward(model, batch);
    LossAndGrads out;
    out.loss = cross_entropy(f.scores, batch.labels, true);

    // G = (softmax - onehot) · scale / B, reusing the score buffer.
    Matrix& g = f.scores;
    for (std::size_t b = 0; b < g.rows(); ++b) g(b, batch.labels[b]) -= 1.0;
    const double factor = model.scale / static_cast<double>(g.rows());
    for (double& v : g.data()) v *= factor;

    Matrix d_images = matmul(g, f.proj_texts);     // B x d_joint
    Matrix d_texts = matmul_tn(g, f.proj_images);  // N x d_joint
    if (model.normalize) {
        unnormalize_grad(d_images, f.proj_images, f.image_norms);
        unnormalize_grad(d_texts, f.proj_texts, f.text_norms);
    }
    out.grads.image_proj = matmul_tn(batch.images, d_images);
    out.grads.text_proj = matmul_tn(batch.texts, d_texts);
    return out;
}

Gradients grads(const ProjectionModel& model, const Batch& batch) { return loss_and_grads(model, batch).grads; }

std::vector<std::size_t> argmax_rows(const Matrix& scores) {
    std::vector<std::size_t> out(scores.rows());
    for (std::size_t b = 0; b < scores.rows(); ++b) {
        const auto row = scores.row(b);
        std::size_t best = 0;
        for (std::size_t k = 1; k < row.size(); ++k)
            if (row[k] > row[best]) best = k;
        out[b] = best;
    }
    return out;
}

std::vector<std::size_t> predict(const ProjectionModel& model, const Batch& batch) {
    return argmax_rows(logits(model, batch));
}

double accuracy(const ProjectionModel& model, const Batch& batch) {
    const auto pred = predict(model, batch);
    std::size_t correct = 0;
    for (std::size_t b = 0; b < pred.size(); ++b) correct += pred[b] == batch.labels[b] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'P', 'R', 'J'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    auto bits = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    out.insert(out.end(), bits.begin(), bits.end());
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* what) {
    if (in.size() - pos < sizeof(T)) throw CorruptionError(std::string("truncated checkpoint reading ") + what, pos);
    std::array<std::uint8_t, sizeof(T)> bits;
    std::memcpy(bits.data(), in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    pos += sizeof(T);
    return std::bit_cast<T>(bits);
}

}  // namespace

void write_checkpoint(const ProjectionModel& model, const std::filesystem::path& path) {
    model.validate();
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.d_img()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.d_txt()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.d_joint()));
    put_le<double>(out, model.scale);
    put_le<std::uint8_t>(out, model.normalize ? 1 : 0);
    for (const Matrix* w : {&model.image_proj, &model.text_proj})
        for (double v : w->data()) put_le<float>(out, static_cast<float>(v));

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing", tmp.string());
        f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("write failed", tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename checkpoint into place (" + ec.message() + ")", path.string());
}

ProjectionModel read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint", path.string());
    const std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < 4 || std::memcmp(in.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("not an FPRJ checkpoint: " + path.string());
    std::size_t pos = 4;
    const auto version = get_le<std::uint32_t>(in, pos, "version");
    if (version != kCheckpointVersion) throw VersionError("unsupported FPRJ version " + std::to_string(version));
    const auto d_img = get_le<std::uint32_t>(in, pos, "d_img");
    const auto d_txt = get_le<std::uint32_t>(in, pos, "d_txt");
    const auto d_joint = get_le<std::uint32_t>(in, pos, "d_joint");
    ProjectionModel m;
    m.scale = get_le<double>(in, pos, "scale");
    const auto norm_flag = get_le<std::uint8_t>(in, pos, "normalize");
    if (norm_flag > 1) throw FormatError("FPRJ normalize flag must be 0 or 1");
    m.normalize = norm_flag == 1;
    const std::size_t needed = (std::size_t(d_img) + d_txt) * d_joint * 4;
    if (in.size() - pos != needed) {
        throw CorruptionError("checkpoint payload holds " + std::to_string(in.size() - pos) + " bytes, expected " +
                                  std::to_string(needed),
                              pos);
    }
    m.image_proj = Matrix(d_img, d_joint);
    m.text_proj = Matrix(d_txt, d_joint);
    for (Matrix* w : {&m.image_proj, &m.text_proj})
        for (double& v : w->data()) v = static_cast<double>(get_le<float>(in, pos, "weights"));
    m.validate();
    return m;
}

}  // namespace fewshot
