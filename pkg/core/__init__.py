"""Numerical kernel: wells, tensors, fields, solver and constructions"""
