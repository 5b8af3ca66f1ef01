#include <cstring>
#include <fstream>
#include <limits>

#include "monli/intervene.hpp"

namespace monli {

namespace {

constexpr char kMagic[8] = {'M', 'N', 'L', 'I', 'X', 'L', 'O', 'G'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(unsigned char* p, T v) {
    for (std::size_t b = 0; b < sizeof(T); ++b) p[b] = static_cast<unsigned char>(v >> (8 * b));
}

template <typename T>
T get(const unsigned char* p) {
    T v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(p[b]) << (8 * b);
    return v;
}

}  // namespace

void encode_record(const InterchangeResult& r, unsigned char* out) {
    put<std::uint32_t>(out, r.i);
    put<std::uint32_t>(out + 4, r.j);
    out[8] = static_cast<unsigned char>(r.location.row);
    out[9] = static_cast<unsigned char>(r.location.role);
    out[10] = static_cast<unsigned char>(r.patched);
    out[11] = static_cast<unsigned char>(r.unpatched);
    out[12] = static_cast<unsigned char>(r.oracle);
    out[13] = static_cast<unsigned char>((r.match ? 1 : 0) | (r.causal ? 2 : 0));
    out[14] = out[15] = 0;
}

InterchangeResult decode_record(const unsigned char* in) {
    InterchangeResult r;
    r.i = get<std::uint32_t>(in);
    r.j = get<std::uint32_t>(in + 4);
    r.location = {in[8], static_cast<Role>(in[9])};
    if (in[9] > 2 || in[10] > 1 || in[11] > 1 || in[12] > 1 || in[13] > 3) {
        throw DataError("corrupt result record");
    }
    r.patched = static_cast<Label>(in[10]);
    r.unpatched = static_cast<Label>(in[11]);
    r.oracle = static_cast<Label>(in[12]);
    r.match = in[13] & 1;
    r.causal = in[13] & 2;
    return r;
}

void encode_log_header(const ResultLogHeader& h, unsigned char* out) {
    std::memset(out, 0, kLogHeaderBytes);
    std::memcpy(out, kMagic, sizeof kMagic);
    put<std::uint32_t>(out + 8, kVersion);
    put<std::uint32_t>(out + 12, h.count);
    out[16] = static_cast<unsigned char>(h.location.row);
    out[17] = static_cast<unsigned char>(h.location.role);
    put<std::uint64_t>(out + 20, h.fingerprint);
}

ResultLogHeader decode_log_header(const unsigned char* in) {
    if (std::memcmp(in, kMagic, sizeof kMagic) != 0) throw DataError("not an interchange result log");
    if (get<std::uint32_t>(in + 8) != kVersion) throw DataError("unsupported result log version");
    if (in[17] > 2) throw DataError("corrupt result log header");
    ResultLogHeader h;
    h.count = get<std::uint32_t>(in + 12);
    h.location = {in[16], static_cast<Role>(in[17])};
    h.fingerprint = get<std::uint64_t>(in + 20);
    return h;
}

ResultLog read_result_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open result log " + path.string());
    unsigned char head[kLogHeaderBytes];
    in.read(reinterpret_cast<char*>(head), sizeof head);
    if (!in) throw DataError("truncated result log " + path.string());
    ResultLog log;
    log.header = decode_log_header(head);
    // Bytes past the committed length belong to an interrupted recipient.
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max();
    SweepIndex idx;
    if (read_sweep_index(path, idx)) limit = idx.bytes;
    unsigned char rec[kLogRecordBytes];
    std::uint64_t pos = kLogHeaderBytes;
    while (pos + kLogRecordBytes <= limit && in.read(reinterpret_cast<char*>(rec), sizeof rec)) {
        log.results.push_back(decode_record(rec));
        pos += kLogRecordBytes;
    }
    return log;
}

std::filesystem::path index_path(const std::filesystem::path& log) {
    auto p = log;
    p += ".idx";
    return p;
}

bool read_sweep_index(const std::filesystem::path& log, SweepIndex& out) {
    std::ifstream in(index_path(log));
    if (!in) return false;
    std::string magic;
    in >> magic >> out.recipients >> out.bytes >> out.fingerprint;
    if (!in || magic != "MNLIXIDX1") throw DataError("corrupt sweep index " + index_path(log).string());
    return true;
}

void write_sweep_index(const std::filesystem::path& log, const SweepIndex& idx) {
    const auto target = index_path(log);
    auto tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << "MNLIXIDX1 " << idx.recipients << ' ' << idx.bytes << ' ' << idx.fingerprint << '\n';
        out.flush();
        if (!out) throw IoError("cannot write sweep index " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw IoError("cannot replace sweep index " + target.string() + ": " + ec.message());
}

}  // namespace monli
