#include "rcod/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "rcod/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace rcod {

namespace {

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

uint32_t get_u32(const std::string& buf, size_t& pos, const std::string& what) {
    if (pos + 4 > buf.size()) throw LoadError("checkpoint truncated while reading " + what);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
}

}  // namespace

void save_checkpoint(const std::map<std::string, TensorF>& tensors, const std::string& path) {
    std::string buf;
    buf.append("RCOD", 4);
    put_u32(buf, kCheckpointVersion);
    for (const auto& [name, tensor] : tensors) {
        put_u32(buf, uint32_t(name.size()));
        buf.append(name);
        buf.push_back(char(0));  // dtype f32
        buf.push_back(char(tensor.ndim()));
        for (int d : tensor.shape) put_u32(buf, uint32_t(d));
        const size_t bytes = tensor.data.size() * sizeof(float);
        const size_t at = buf.size();
        buf.resize(at + bytes);
        std::memcpy(buf.data() + at, tensor.data.data(), bytes);
    }
    uint32_t crc = uint32_t(crc32(0L, Z_NULL, 0));
    crc = uint32_t(crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size())));
    put_u32(buf, crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("short write to checkpoint: " + path);
}

std::map<std::string, TensorF> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 12) throw LoadError(path + ": file too small for a checkpoint");
    if (buf.compare(0, 4, "RCOD") != 0) throw LoadError(path + ": bad magic (want RCOD)");

    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    uint32_t crc = uint32_t(crc32(0L, Z_NULL, 0));
    crc = uint32_t(crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size() - 4)));
    if (crc != stored_crc) throw LoadError(path + ": CRC mismatch, checkpoint is corrupted");

    size_t pos = 4;
    const uint32_t version = get_u32(buf, pos, "version");
    if (version != kCheckpointVersion)
        throw LoadError(path + ": unsupported checkpoint version " + std::to_string(version));

    const size_t end = buf.size() - 4;
    std::map<std::string, TensorF> tensors;
    while (pos < end) {
        const uint32_t name_len = get_u32(buf, pos, "tensor name length");
        if (pos + name_len > end) throw LoadError(path + ": truncated tensor name");
        std::string name = buf.substr(pos, name_len);
        pos += name_len;
        if (pos + 2 > end) throw LoadError(path + ": truncated tensor header for " + name);
        const uint8_t dtype = uint8_t(buf[pos++]);
        const uint8_t ndim = uint8_t(buf[pos++]);
        if (dtype != 0) throw LoadError(path + ": unsupported dtype tag for " + name);
        std::vector<int> shape(ndim);
        int64_t numel = 1;
        for (int i = 0; i < ndim; ++i) {
            shape[size_t(i)] = int(get_u32(buf, pos, "dims of " + name));
            numel *= shape[size_t(i)];
        }
        const size_t bytes = size_t(numel) * sizeof(float);
        if (pos + bytes > end) throw LoadError(path + ": truncated payload for " + name);
        TensorF t(shape);
        std::memcpy(t.data.data(), buf.data() + pos, bytes);
        pos += bytes;
        tensors.emplace(std::move(name), std::move(t));
    }
    if (pos != end) throw LoadError(path + ": trailing bytes inside the tensor table");
    return tensors;
}

}  // namespace rcod
