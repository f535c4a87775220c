#include "singanseg/util.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "singanseg/errors.hpp"

namespace singanseg::util {

namespace fs = std::filesystem;

std::string sha256_hex(const void* data, std::size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr);
    std::ostringstream out;
    out << std::hex;
    for (unsigned int i = 0; i < digest_len; ++i) {
        out << ((digest[i] >> 4) & 0xf) << (digest[i] & 0xf);
    }
    return out.str();
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read file: " + p.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    EVP_DigestFinal_ex(ctx, digest, &digest_len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream out;
    out << std::hex;
    for (unsigned int i = 0; i < digest_len; ++i) {
        out << ((digest[i] >> 4) & 0xf) << (digest[i] & 0xf);
    }
    return out.str();
}

std::string sha256_tree(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) {
        acc += fs::relative(f, dir).generic_string();
        acc += ':';
        acc += sha256_file(f);
        acc += '\n';
    }
    return sha256_hex(acc);
}

void log_kv(std::initializer_list<std::pair<std::string, std::string>> kvs) {
    std::ostringstream line;
    bool first = true;
    for (const auto& [k, v] : kvs) {
        if (!first) line << ' ';
        first = false;
        line << k << '=' << v;
    }
    std::cout << line.str() << '\n';
}

std::string format_float(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

}  // namespace singanseg::util
