#include "lesdet/util.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "lesdet/error.hpp"

namespace lesdet {

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  impl_->ctx = EVP_MD_CTX_new();
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
    throw StateError("failed to initialise SHA-256");
  }
}

Sha256::~Sha256() {
  if (impl_ && impl_->ctx) EVP_MD_CTX_free(impl_->ctx);
}

Sha256& Sha256::update(const void* data, std::size_t len) {
  EVP_DigestUpdate(impl_->ctx, data, len);
  return *this;
}

Sha256& Sha256::update(const Tensor& t) {
  for (auto d : t.shape()) {
    const auto v = static_cast<std::uint64_t>(d);
    update(&v, sizeof v);
  }
  return update(t.data());
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, md.data(), &len);
  std::string out;
  out.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data);
  return h.hex();
}

}  // namespace lesdet
