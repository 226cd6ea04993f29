#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"

namespace fewshot {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Plain numeric CSV: one matrix row per line, comma separated. Blank lines
// and lines starting with '#' are skipped.
Matrix read_csv_matrix(const fs::path& path, std::size_t expected_cols) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV matrix", path.string());
    std::vector<double> data;
    std::size_t rows = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::size_t cols = 0;
        std::string_view rest(line);
        for (;;) {
            const std::size_t comma = rest.find(',');
            std::string_view field = rest.substr(0, comma);
            while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
            while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
            double v = 0.0;
            const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
            if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" +
                                  std::string(field) + "'");
            }
            // Stored as f32 in FEWEMB; round now so the import is stable.
            data.push_back(static_cast<double>(static_cast<float>(v)));
            ++cols;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (cols != expected_cols) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(expected_cols) + " columns, got " + std::to_string(cols));
        }
        ++rows;
    }
    return Matrix(rows, expected_cols, std::move(data));
}

template <typename T>
T required(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(where + ": bad value for '" + key + "': " + e.what());
    }
}

}  // namespace

EmbeddingDataset import_csv_directory(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest", manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }

    EmbeddingDataset ds;
    ds.d_img = required<std::uint32_t>(manifest, "d_img", "manifest");
    ds.d_txt = required<std::uint32_t>(manifest, "d_txt", "manifest");
    ds.d_joint = required<std::uint32_t>(manifest, "d_joint", "manifest");
    ds.prompt_template = manifest.value("prompt_template", std::string("A photo of {label}."));
    (void)fill_prompt(ds.prompt_template, "x");

    if (manifest.contains("projection")) {
        const json& p = manifest["projection"];
        ProjectionPair head;
        head.image = read_csv_matrix(dir / required<std::string>(p, "image", "manifest projection"), ds.d_joint);
        head.text = read_csv_matrix(dir / required<std::string>(p, "text", "manifest projection"), ds.d_joint);
        ds.pretrained = std::move(head);
    }

    const json classes = required<json>(manifest, "classes", "manifest");
    if (!classes.is_array()) throw ValidationError("manifest: 'classes' must be an array");
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const json& c = classes[i];
        const std::string where = "manifest classes[" + std::to_string(i) + "]";
        ClassRecord rec;
        rec.name = required<std::string>(c, "name", where);
        const Matrix text = read_csv_matrix(dir / required<std::string>(c, "text", where), ds.d_txt);
        if (text.rows() != 1) {
            throw ValidationError(where + " text: expected exactly one row, got " + std::to_string(text.rows()));
        }
        rec.text_embedding.assign(text.data().begin(), text.data().end());
        rec.train = read_csv_matrix(dir / required<std::string>(c, "train", where), ds.d_img);
        rec.support = read_csv_matrix(dir / required<std::string>(c, "support", where), ds.d_img);
        rec.query = read_csv_matrix(dir / required<std::string>(c, "query", where), ds.d_img);
        ds.classes.push_back(std::move(rec));
    }
    ds.validate();
    return ds;
}

}  // namespace fewshot
