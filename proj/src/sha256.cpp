#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>

#include "branchsim/experiment.hpp"

namespace branchsim {

namespace {

std::string to_hex(const unsigned char* digest, unsigned len) {
    static const char* hexd = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = hexd[digest[i] >> 4];
        out[2 * i + 1] = hexd[digest[i] & 0xF];
    }
    return out;
}

struct CtxDeleter {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
using CtxPtr = std::unique_ptr<EVP_MD_CTX, CtxDeleter>;

CtxPtr new_sha256_ctx() {
    CtxPtr ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: failed to initialize digest context");
    }
    return ctx;
}

std::string finish(CtxPtr ctx) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
        throw std::runtime_error("sha256: failed to finalize digest");
    }
    return to_hex(digest.data(), len);
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t bytes) {
    auto ctx = new_sha256_ctx();
    if (bytes > 0 && EVP_DigestUpdate(ctx.get(), data, bytes) != 1) {
        throw std::runtime_error("sha256: digest update failed");
    }
    return finish(std::move(ctx));
}

std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

std::string sha256_file(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "rb"),
                                                      &std::fclose);
    if (!f) throw std::runtime_error("sha256: cannot open file: " + path);
    auto ctx = new_sha256_ctx();
    std::array<unsigned char, 1 << 16> buf;
    for (;;) {
        std::size_t got = std::fread(buf.data(), 1, buf.size(), f.get());
        if (got > 0 && EVP_DigestUpdate(ctx.get(), buf.data(), got) != 1) {
            throw std::runtime_error("sha256: digest update failed");
        }
        if (got < buf.size()) {
            if (std::ferror(f.get())) throw std::runtime_error("sha256: read error: " + path);
            break;
        }
    }
    return finish(std::move(ctx));
}

}  // namespace branchsim
