#include "neursplit/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "neursplit/error.hpp"

namespace neursplit {
namespace io {

namespace {

template <typename Word>
Word to_le(Word w) {
    if constexpr (std::endian::native == std::endian::little) {
        return w;
    } else {
        Word out = 0;
        for (std::size_t b = 0; b < sizeof(Word); ++b) out |= ((w >> (8 * b)) & 0xff) << (8 * (sizeof(Word) - 1 - b));
        return out;
    }
}

template <typename Word>
void append_words(std::string& out, const Word* words, std::size_t count) {
    const std::size_t base = out.size();
    out.resize(base + count * sizeof(Word));
    for (std::size_t i = 0; i < count; ++i) {
        const Word le = to_le(words[i]);
        std::memcpy(out.data() + base + i * sizeof(Word), &le, sizeof(Word));
    }
}

template <typename Word>
std::vector<Word> read_words(std::string_view bytes, std::size_t offset, std::size_t count) {
    if (offset > bytes.size() || count > (bytes.size() - offset) / sizeof(Word)) {
        fail("payload too short: need " + std::to_string(count * sizeof(Word)) + " bytes at offset " +
             std::to_string(offset) + ", have " + std::to_string(bytes.size()));
    }
    std::vector<Word> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        Word w;
        std::memcpy(&w, bytes.data() + offset + i * sizeof(Word), sizeof(Word));
        out[i] = to_le(w);
    }
    return out;
}

} // namespace

void append_f32(std::string& out, std::span<const float> values) {
    std::vector<std::uint32_t> words(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) words[i] = std::bit_cast<std::uint32_t>(values[i]);
    append_words(out, words.data(), words.size());
}

void append_u64(std::string& out, std::span<const std::uint64_t> values) {
    append_words(out, values.data(), values.size());
}

std::vector<float> read_f32(std::string_view bytes, std::size_t offset, std::size_t count) {
    const auto words = read_words<std::uint32_t>(bytes, offset, count);
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<float>(words[i]);
    return out;
}

std::vector<std::uint64_t> read_u64(std::string_view bytes, std::size_t offset, std::size_t count) {
    return read_words<std::uint64_t>(bytes, offset, count);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail("write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        fail(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

void check_format(const json& doc, std::string_view expected, const std::filesystem::path& path) {
    const auto it = doc.find("format");
    if (it == doc.end() || !it->is_string()) fail(path.string() + ": missing format field");
    const auto found = it->get<std::string>();
    if (found != expected) {
        fail(path.string() + ": format '" + found + "' does not match expected '" + std::string(expected) + "'");
    }
}

void write_header_file(const std::filesystem::path& path, const json& header, std::string_view payload) {
    std::string bytes = header.dump();
    bytes.push_back('\n');
    bytes.append(payload);
    write_file(path, bytes);
}

HeaderFile read_header_file(const std::filesystem::path& path, std::string_view expected_format) {
    std::string bytes = read_file(path);
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) fail(path.string() + ": missing header line");
    HeaderFile out;
    try {
        out.header = json::parse(bytes.substr(0, nl));
    } catch (const json::parse_error& e) {
        fail(path.string() + ": bad header: " + e.what());
    }
    check_format(out.header, expected_format, path);
    out.payload = bytes.substr(nl + 1);
    return out;
}

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    if (p == manifest) p += ".bin";
    return p;
}

} // namespace io

namespace {

json matrix_entry(std::string& blob, const Matrix& mat) {
    json e{{"offset", blob.size()}, {"rows", mat.rows}, {"cols", mat.cols}};
    io::append_f32(blob, mat.data);
    return e;
}

json vector_entry(std::string& blob, const std::vector<float>& v) {
    json e{{"offset", blob.size()}, {"length", v.size()}};
    io::append_f32(blob, v);
    return e;
}

Matrix read_matrix(const json& e, std::string_view blob) {
    Matrix mat(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>());
    mat.data = io::read_f32(blob, e.at("offset").get<std::size_t>(), mat.rows * mat.cols);
    return mat;
}

std::vector<float> read_vector(const json& e, std::string_view blob) {
    return io::read_f32(blob, e.at("offset").get<std::size_t>(), e.at("length").get<std::size_t>());
}

} // namespace

void save_model(const Model& model, const std::filesystem::path& manifest) {
    model.check();
    std::string blob;
    json layers = json::array();
    for (const auto& w : model.layers) {
        json e;
        e["fc1"] = matrix_entry(blob, w.fc1);
        e["fc2"] = matrix_entry(blob, w.fc2);
        if (w.gated()) e["gate"] = matrix_entry(blob, w.gate);
        if (!w.fc1_bias.empty()) e["fc1_bias"] = vector_entry(blob, w.fc1_bias);
        if (!w.gate_bias.empty()) e["gate_bias"] = vector_entry(blob, w.gate_bias);
        layers.push_back(std::move(e));
    }
    const auto blob_file = io::blob_path(manifest);
    json doc{{"format", kModelFormat},
             {"config",
              {{"num_layers", model.config.num_layers},
               {"hidden_dim", model.config.hidden_dim},
               {"intermediate_dim", model.config.intermediate_dim},
               {"activation", to_string(model.config.activation)},
               {"weight_precision", "f32"}}},
             {"blob", blob_file.filename().string()},
             {"blob_bytes", blob.size()},
             {"layers", std::move(layers)}};
    io::write_file(blob_file, blob);
    io::write_json(manifest, doc);
}

Model load_model(const std::filesystem::path& manifest) {
    const json doc = io::read_json(manifest);
    io::check_format(doc, kModelFormat, manifest);
    Model model;
    try {
        const auto& c = doc.at("config");
        model.config.num_layers = c.at("num_layers").get<std::size_t>();
        model.config.hidden_dim = c.at("hidden_dim").get<std::size_t>();
        model.config.intermediate_dim = c.at("intermediate_dim").get<std::size_t>();
        model.config.activation = activation_from_string(c.at("activation").get<std::string>());
        const auto blob_file = manifest.parent_path() / doc.at("blob").get<std::string>();
        const std::string blob = io::read_file(blob_file);
        if (blob.size() != doc.at("blob_bytes").get<std::size_t>()) {
            fail(blob_file.string() + ": size " + std::to_string(blob.size()) + " does not match manifest");
        }
        for (const auto& e : doc.at("layers")) {
            LayerWeights w;
            w.fc1 = read_matrix(e.at("fc1"), blob);
            w.fc2 = read_matrix(e.at("fc2"), blob);
            if (e.contains("gate")) w.gate = read_matrix(e.at("gate"), blob);
            if (e.contains("fc1_bias")) w.fc1_bias = read_vector(e.at("fc1_bias"), blob);
            if (e.contains("gate_bias")) w.gate_bias = read_vector(e.at("gate_bias"), blob);
            model.layers.push_back(std::move(w));
        }
    } catch (const json::exception& e) {
        fail(manifest.string() + ": " + e.what());
    }
    model.check();
    return model;
}

void save_trace(const std::vector<std::vector<float>>& inputs, const std::filesystem::path& path) {
    const std::size_t dim = inputs.empty() ? 0 : inputs.front().size();
    std::string payload;
    for (const auto& x : inputs) {
        require(x.size() == dim, "save_trace: ragged input vectors");
        io::append_f32(payload, x);
    }
    io::write_header_file(path, json{{"format", kTraceFormat}, {"dim", dim}, {"count", inputs.size()}}, payload);
}

std::vector<std::vector<float>> load_trace(const std::filesystem::path& path) {
    const auto file = io::read_header_file(path, kTraceFormat);
    const auto dim = file.header.at("dim").get<std::size_t>();
    const auto count = file.header.at("count").get<std::size_t>();
    require(file.payload.size() == dim * count * sizeof(float),
            path.string() + ": payload size does not match dim*count");
    std::vector<std::vector<float>> out(count);
    for (std::size_t k = 0; k < count; ++k) out[k] = io::read_f32(file.payload, k * dim * sizeof(float), dim);
    return out;
}

} // namespace neursplit
