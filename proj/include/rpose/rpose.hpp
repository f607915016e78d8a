#pragma once

#include "rpose/common.hpp"
#include "rpose/data.hpp"
#include "rpose/io.hpp"
#include "rpose/meta.hpp"
#include "rpose/nn.hpp"
#include "rpose/pointcloud.hpp"
#include "rpose/synth.hpp"
#include "rpose/train.hpp"
