#pragma once

#include "focalcodec/bsq.hpp"
#include "focalcodec/codec.hpp"
#include "focalcodec/common.hpp"
#include "focalcodec/focalnet.hpp"
#include "focalcodec/io.hpp"
#include "focalcodec/stream.hpp"
#include "focalcodec/tensor.hpp"
#include "focalcodec/trainer.hpp"
#include "focalcodec/vocoder.hpp"
