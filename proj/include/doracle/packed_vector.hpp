#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "doracle/common.hpp"

namespace doracle {

/// Word-packed representation of small-integer vectors supporting exact
/// squared Euclidean distance with a constant number of word operations per
/// block. A vector is stored twice: the u-form places coordinate i at bit
/// stride r = 2b, the v-form at stride r' = 2b*dhat. The masked product of a
/// u-form with a v-form isolates the products p_i*q_i on a fixed comb, and a
/// second multiply sums them into one bit window.
class PackedVector {
  public:
    PackedVector() = default;

    /// coords must satisfy 0 <= coord < 2^bits. Splits into blocks when the
    /// single-word bit budget is exceeded; each block independently satisfies
    /// the in-word layout.
    static PackedVector pack(const std::vector<std::uint32_t>& coords, int bits) {
        if (bits < 1 || bits > 16) throw std::invalid_argument("pack: bits must be in [1,16]");
        if (coords.empty()) throw std::invalid_argument("pack: empty vector");
        for (std::uint32_t c : coords)
            if (c >> bits)
                throw std::invalid_argument("pack: coordinate out of range for " +
                                            std::to_string(bits) + " bits");
        PackedVector pv;
        pv.dim_ = coords.size();
        pv.bits_ = bits;
        pv.block_dim_ = block_dim_for(bits);
        std::size_t nblocks = (coords.size() + pv.block_dim_ - 1) / pv.block_dim_;
        pv.u_.resize(nblocks, 0);
        pv.v_.resize(nblocks, 0);
        std::size_t dhat = padded_dim(pv.block_dim_);
        std::uint64_t r = 2ull * bits;
        std::uint64_t rp = r * dhat;
        for (std::size_t blk = 0; blk < nblocks; ++blk) {
            for (std::size_t i = 0; i < pv.block_dim_; ++i) {
                std::size_t idx = blk * pv.block_dim_ + i;
                std::uint64_t c = idx < coords.size() ? coords[idx] : 0;
                pv.u_[blk] |= c << (r * i);
                pv.v_[blk] |= c << (rp * i);
                pv.sum_sq_ += c * c;
            }
        }
        return pv;
    }

    std::size_t dimension() const { return dim_; }
    int bits() const { return bits_; }
    std::size_t block_count() const { return u_.size(); }
    std::uint64_t sum_of_squares() const { return sum_sq_; }
    std::uint64_t u_word(std::size_t blk) const { return u_[blk]; }
    std::uint64_t v_word(std::size_t blk) const { return v_[blk]; }

    std::vector<std::uint32_t> decode() const {
        std::vector<std::uint32_t> out(dim_);
        std::uint64_t r = 2ull * bits_;
        std::uint64_t mask = (bits_ == 32) ? ~0u : ((1ull << bits_) - 1);
        for (std::size_t i = 0; i < dim_; ++i) {
            std::size_t blk = i / block_dim_, off = i % block_dim_;
            out[i] = static_cast<std::uint32_t>((u_[blk] >> (r * off)) & mask);
        }
        return out;
    }

    /// Exact dot product, one multiply-mask-multiply per block.
    std::uint64_t dot(const PackedVector& q) const {
        require_same_shape(q);
        std::uint64_t total = 0;
        std::size_t dhat = padded_dim(block_dim_);
        std::uint64_t r = 2ull * bits_;
        std::uint64_t rp = r * dhat;
        std::uint64_t stride = r + rp;
        std::uint64_t prod_mask = product_mask(dhat, r, stride);
        std::uint64_t comb = comb_word(dhat, stride);
        std::uint64_t sum_shift = stride * (dhat - 1);
        std::uint64_t sum_bits = r + log2_ceil(dhat);
        std::uint64_t sum_mask = sum_bits >= 64 ? ~0ull : ((1ull << sum_bits) - 1);
        for (std::size_t blk = 0; blk < u_.size(); ++blk) {
            std::uint64_t w = u_[blk] * q.v_[blk];  // op 1
            w &= prod_mask;                         // op 2
            std::uint64_t y = w * comb;             // op 3
            total += (y >> sum_shift) & sum_mask;   // ops 4-5
        }
        return total;
    }

    /// Exact squared Euclidean distance: sum p^2 - 2*dot + sum q^2.
    std::uint64_t squared_distance(const PackedVector& q) const {
        require_same_shape(q);
        return sum_sq_ + q.sum_sq_ - 2 * dot(q);
    }

    /// Largest block dimension whose in-word layout (including the summed
    /// window) fits in 64 bits for the given coordinate width.
    static std::size_t block_dim_for(int bits) {
        std::size_t best = 1;
        for (std::size_t d = 1; d <= 64; ++d) {
            std::size_t dhat = padded_dim(d);
            std::uint64_t r = 2ull * bits;
            std::uint64_t stride = r + r * dhat;
            std::uint64_t top_bit = stride * (dhat - 1) + r + log2_ceil(dhat);
            if (top_bit <= 63)
                best = d;
            else
                break;
        }
        return best;
    }

    static std::size_t padded_dim(std::size_t d) {
        std::size_t p = 1;
        while (p < d) p <<= 1;
        return p;
    }

  private:
    static std::uint64_t log2_ceil(std::size_t d) {
        std::uint64_t k = 0;
        while ((1ull << k) < d) ++k;
        return k;
    }

    static std::uint64_t product_mask(std::size_t dhat, std::uint64_t r, std::uint64_t stride) {
        std::uint64_t m = 0;
        std::uint64_t unit = r >= 64 ? ~0ull : ((1ull << r) - 1);
        for (std::size_t i = 0; i < dhat; ++i) m |= unit << (stride * i);
        return m;
    }

    static std::uint64_t comb_word(std::size_t dhat, std::uint64_t stride) {
        std::uint64_t x = 0;
        for (std::size_t i = 0; i < dhat; ++i) x |= 1ull << (stride * i);
        return x;
    }

    void require_same_shape(const PackedVector& q) const {
        if (dim_ != q.dim_ || bits_ != q.bits_)
            throw std::invalid_argument("packed vectors have mismatched shape");
    }

    std::size_t dim_ = 0;
    std::size_t block_dim_ = 1;
    int bits_ = 0;
    std::uint64_t sum_sq_ = 0;
    std::vector<std::uint64_t> u_;
    std::vector<std::uint64_t> v_;
};

}  // namespace doracle
