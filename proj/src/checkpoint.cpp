#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "monli/error.hpp"
#include "monli/model.hpp"

// Checkpoint layout:
//   8 bytes  magic "MONLICKP"
//   4 bytes  format version (little endian)
//   8 bytes  header length N (little endian)
//   N bytes  JSON header: config, vocabulary, parameter groups, checksum
//   parameters as little-endian IEEE-754 doubles

namespace monli {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'N', 'L', 'I', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw DataError("truncated checkpoint");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
    return value;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const auto& c = model.config();
    nlohmann::json header;
    header["config"] = {{"rows", c.rows},       {"width", c.width},     {"heads", c.heads},
                        {"ffn", c.ffn},         {"max_len", c.max_len}, {"seed", c.seed}};
    header["vocab"] = c.vocab.tokens();
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : model.layout().groups) groups.push_back({g.name, g.rows, g.cols});
    header["groups"] = groups;
    header["param_count"] = model.parameters().size();
    header["checksum"] = model.checksum();
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_le<std::uint32_t>(out, kVersion);
    write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (double v : model.parameters()) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw IoError("write failed for checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw DataError(path.string() + " is not a model checkpoint");
    }
    if (read_le<std::uint32_t>(in) != kVersion) throw DataError("unsupported checkpoint version");
    const auto len = read_le<std::uint64_t>(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt checkpoint header: ") + e.what());
    }
    ModelConfig c;
    const auto& jc = header.at("config");
    c.rows = jc.at("rows").get<int>();
    c.width = jc.at("width").get<int>();
    c.heads = jc.at("heads").get<int>();
    c.ffn = jc.at("ffn").get<int>();
    c.max_len = jc.at("max_len").get<int>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());

    const auto count = header.at("param_count").get<std::size_t>();
    ParamVector params(count);
    for (auto& v : params) v = std::bit_cast<double>(read_le<std::uint64_t>(in));
    Model model(std::move(c), std::move(params));
    if (model.checksum() != header.at("checksum").get<std::uint64_t>()) {
        throw DataError("checkpoint checksum mismatch in " + path.string());
    }
    return model;
}

}  // namespace monli
