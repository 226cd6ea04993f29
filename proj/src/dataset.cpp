#include "fewshot/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "fewshot/errors.hpp"

namespace fewshot {
namespace {

constexpr std::array<char, 4> kMagic = {'F', 'E', 'M', 'B'};

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
        raw(&v, 4);
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void f32s(std::span<const double> vs) {
        for (double v : vs) f32(v);
    }
    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

    static std::uint32_t byteswap32(std::uint32_t v) {
        return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
    }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n, const std::string& what) const {
        if (remaining() < n) throw CorruptionError("truncated payload while reading " + what, pos_);
    }
    std::uint8_t u8(const std::string& what) {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint32_t u32(const std::string& what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        if constexpr (std::endian::native == std::endian::big) v = ByteWriter::byteswap32(v);
        return v;
    }
    double f32(const std::string& what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }
    std::vector<double> f32s(std::size_t n, const std::string& what) {
        need(n * 4, what);
        std::vector<double> out(n);
        for (double& v : out) v = f32(what);
        return out;
    }
    std::string text(const std::string& what) {
        const std::uint32_t len = u32(what + " length");
        need(len, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& where) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ValidationError(where + ": expected shape (" + std::to_string(rows) + "x" + std::to_string(cols) +
                              "), got " + m.shape_string());
    }
    if (!m.all_finite()) throw ValidationError(where + ": contains non-finite entries");
}

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_to_float(Matrix& m) {
    for (double& v : m.data()) v = to_float_precision(v);
}

}  // namespace

void EmbeddingDataset::validate() const {
    if (d_img == 0 || d_txt == 0 || d_joint == 0) throw ValidationError("dataset: dimensions must be positive");
    if (classes.size() < 2) {
        throw ValidationError("dataset: need at least 2 classes, got " + std::to_string(classes.size()));
    }
    std::set<std::string> names;
    const ClassRecord& first = classes.front();
    for (const ClassRecord& c : classes) {
        const std::string where = "class '" + c.name + "'";
        if (c.name.empty()) throw ValidationError("dataset: class with empty name");
        if (!names.insert(c.name).second) throw ValidationError(where + ": duplicate class name");
        if (c.text_embedding.size() != d_txt) {
            throw ValidationError(where + " text_embedding: expected length " + std::to_string(d_txt) + ", got " +
                                  std::to_string(c.text_embedding.size()));
        }
        if (!std::all_of(c.text_embedding.begin(), c.text_embedding.end(), [](double v) { return std::isfinite(v); }))
            throw ValidationError(where + " text_embedding: contains non-finite entries");
        check_matrix(c.train, first.train.rows(), d_img, where + " train");
        check_matrix(c.support, first.support.rows(), d_img, where + " support");
        check_matrix(c.query, first.query.rows(), d_img, where + " query");
    }
    if (pretrained) {
        check_matrix(pretrained->image, d_img, d_joint, "pretrained projection image");
        check_matrix(pretrained->text, d_txt, d_joint, "pretrained projection text");
    }
}

std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& ds) {
    ds.validate();
    ByteWriter w;
    w.raw(kMagic.data(), kMagic.size());
    w.u32(kDatasetVersion);
    w.u32(ds.d_img);
    w.u32(ds.d_txt);
    w.u32(ds.d_joint);
    w.u32(static_cast<std::uint32_t>(ds.classes.size()));
    w.u8(ds.pretrained ? 1 : 0);
    if (ds.pretrained) {
        w.f32s(ds.pretrained->image.data());
        w.f32s(ds.pretrained->text.data());
    }
    w.text(ds.prompt_template);
    for (const ClassRecord& c : ds.classes) {
        w.text(c.name);
        w.f32s(c.text_embedding);
        w.u32(static_cast<std::uint32_t>(c.train.rows()));
        w.u32(static_cast<std::uint32_t>(c.support.rows()));
        w.u32(static_cast<std::uint32_t>(c.query.rows()));
        w.f32s(c.train.data());
        w.f32s(c.support.data());
        w.f32s(c.query.data());
    }
    return w.take();
}

EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.need(4, "magic");
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw FormatError("not a FEWEMB file: bad magic");
    for (int i = 0; i < 4; ++i) r.u8("magic");
    const std::uint32_t version = r.u32("version");
    if (version != kDatasetVersion) {
        throw VersionError("unsupported FEWEMB version " + std::to_string(version) + " (expected " +
                           std::to_string(kDatasetVersion) + ")");
    }
    EmbeddingDataset ds;
    ds.d_img = r.u32("d_img");
    ds.d_txt = r.u32("d_txt");
    ds.d_joint = r.u32("d_joint");
    const std::uint32_t m = r.u32("class count");
    const std::uint8_t has_projection = r.u8("has_projection");
    if (has_projection > 1) throw FormatError("has_projection flag must be 0 or 1, got " + std::to_string(has_projection));
    if (has_projection == 1) {
        ProjectionPair p;
        p.image = Matrix(ds.d_img, ds.d_joint, r.f32s(std::size_t(ds.d_img) * ds.d_joint, "pretrained image projection"));
        p.text = Matrix(ds.d_txt, ds.d_joint, r.f32s(std::size_t(ds.d_txt) * ds.d_joint, "pretrained text projection"));
        ds.pretrained = std::move(p);
    }
    ds.prompt_template = r.text("prompt template");
    for (std::uint32_t i = 0; i < m; ++i) {
        const std::string where = "class " + std::to_string(i);
        ClassRecord c;
        c.name = r.text(where + " name");
        c.text_embedding = r.f32s(ds.d_txt, where + " text embedding");
        const std::uint32_t n_train = r.u32(where + " n_train");
        const std::uint32_t n_support = r.u32(where + " n_support");
        const std::uint32_t n_query = r.u32(where + " n_query");
        c.train = Matrix(n_train, ds.d_img, r.f32s(std::size_t(n_train) * ds.d_img, where + " train images"));
        c.support = Matrix(n_support, ds.d_img, r.f32s(std::size_t(n_support) * ds.d_img, where + " support images"));
        c.query = Matrix(n_query, ds.d_img, r.f32s(std::size_t(n_query) * ds.d_img, where + " query images"));
        ds.classes.push_back(std::move(c));
    }
    if (r.remaining() != 0) {
        throw FormatError("unexpected " + std::to_string(r.remaining()) + " trailing bytes after offset " +
                          std::to_string(r.offset()));
    }
    ds.validate();
    return ds;
}

EmbeddingDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset", path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading dataset", path.string());
    return decode_dataset(bytes);
}

void write_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = encode_dataset(ds);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing", tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed", tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " into place (" + ec.message() + ")", path.string());
}

std::string fill_prompt(std::string_view tmpl, std::string_view label) {
    constexpr std::string_view placeholder = "{label}";
    const std::size_t pos = tmpl.find(placeholder);
    if (pos == std::string_view::npos) throw UsageError("prompt template has no {label} placeholder");
    if (tmpl.find(placeholder, pos + placeholder.size()) != std::string_view::npos)
        throw UsageError("prompt template has more than one {label} placeholder");
    std::string out;
    out.reserve(tmpl.size() + label.size());
    out.append(tmpl.substr(0, pos));
    out.append(label);
    out.append(tmpl.substr(pos + placeholder.size()));
    return out;
}

EmbeddingDataset gen_synthetic(const SyntheticSpec& spec, Rng& rng, std::vector<std::string>* warnings) {
    const std::size_t m = spec.num_classes;
    if (m < 2) throw UsageError("gen_synthetic: need at least 2 classes");
    if (!(spec.sigma_within > 0.0)) throw UsageError("gen_synthetic: sigma_within must be positive");
    if (spec.sigma_between < 0.0) throw UsageError("gen_synthetic: sigma_between must be non-negative");
    if (spec.projection_noise < 0.0) throw UsageError("gen_synthetic: projection_noise must be non-negative");
    if (spec.n_train == 0 || spec.n_support == 0 || spec.n_query == 0)
        throw UsageError("gen_synthetic: split counts must be positive");
    if (spec.d_img == 0 || spec.d_txt == 0 || spec.d_joint == 0)
        throw UsageError("gen_synthetic: dimensions must be positive");
    const std::size_t spurious_dims = spec.spurious ? m : 0;
    if (spec.d_img < spec.d_joint + spurious_dims)
        throw UsageError("gen_synthetic: d_img must be at least d_joint" +
                         std::string(spec.spurious ? " + num_classes when spurious" : ""));
    if (spec.d_txt < spec.d_joint) throw UsageError("gen_synthetic: d_txt must be at least d_joint");
    (void)fill_prompt(spec.prompt_template, "x");
    if (spec.sigma_between == 0.0 && !spec.spurious && warnings) {
        warnings->push_back("sigma_between = 0 without a spurious block: labels carry no signal");
    }

    const std::size_t d_core = spec.d_img - spurious_dims;
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_joint));

    // Generating maps, latent -> embedding (rows are latent coordinates).
    Rng map_rng = rng.child(0);
    Matrix img_map(spec.d_joint, d_core);
    for (double& v : img_map.data()) v = map_rng.normal(0.0, map_scale);
    Matrix txt_map(spec.d_joint, spec.d_txt);
    for (double& v : txt_map.data()) v = map_rng.normal(0.0, map_scale);

    Rng centroid_rng = rng.child(1);
    Matrix centroids(m, spec.d_joint);
    for (double& v : centroids.data()) v = centroid_rng.normal(0.0, spec.sigma_between);

    EmbeddingDataset ds;
    ds.d_img = spec.d_img;
    ds.d_txt = spec.d_txt;
    ds.d_joint = spec.d_joint;
    ds.prompt_template = spec.prompt_template;

    const Matrix text = matmul(centroids, txt_map);
    for (std::size_t c = 0; c < m; ++c) {
        Rng class_rng = rng.child(2 + c);
        ClassRecord rec;
        char name[32];
        std::snprintf(name, sizeof name, "class_%02zu", c);
        rec.name = name;
        rec.text_embedding.assign(text.row(c).begin(), text.row(c).end());
        for (double& v : rec.text_embedding) v = to_float_precision(v);

        auto draw = [&](std::size_t count, bool honest_code) {
            Matrix latent(count, spec.d_joint);
            for (std::size_t s = 0; s < count; ++s)
                for (std::size_t j = 0; j < spec.d_joint; ++j)
                    latent(s, j) = centroids(c, j) + class_rng.normal(0.0, spec.sigma_within);
            const Matrix core = matmul(latent, img_map);
            Matrix out(count, spec.d_img);
            for (std::size_t s = 0; s < count; ++s) {
                std::copy(core.row(s).begin(), core.row(s).end(), out.row(s).begin());
                if (spurious_dims > 0) {
                    const std::size_t code = honest_code ? c : class_rng.index(m);
                    out(s, d_core + code) = spec.spurious_strength;
                }
            }
            round_to_float(out);
            return out;
        };
        rec.train = draw(spec.n_train, true);
        rec.support = draw(spec.n_support, false);
        rec.query = draw(spec.n_query, false);
        ds.classes.push_back(std::move(rec));
    }

    // x = z·img_map, so a head W with img_map·W = I recovers the latent.
    ProjectionPair head;
    const Matrix img_inverse = transpose(pseudo_inverse(transpose(img_map)));  // d_core x d_joint
    head.image = Matrix(spec.d_img, spec.d_joint);
    std::copy(img_inverse.data().begin(), img_inverse.data().end(), head.image.data().begin());
    head.text = transpose(pseudo_inverse(transpose(txt_map)));
    if (spec.projection_noise > 0.0) {
        Rng noise_rng = rng.child(2 + m);
        for (Matrix* w : {&head.image, &head.text}) {
            double sq = 0.0;
            for (double v : w->data()) sq += v * v;
            const double rms = std::sqrt(sq / static_cast<double>(w->size()));
            for (double& v : w->data()) v += noise_rng.normal(0.0, spec.projection_noise * rms);
        }
    }
    // Rows of the image head that face the spurious block stay zero.
    for (std::size_t r = d_core; r < spec.d_img; ++r)
        for (double& v : head.image.row(r)) v = 0.0;
    round_to_float(head.image);
    round_to_float(head.text);
    ds.pretrained = std::move(head);
    ds.validate();
    return ds;
}

}  // namespace fewshot
